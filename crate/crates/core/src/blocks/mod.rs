//! Parameterized building blocks. Each block registers its tensors in a
//! [`ParamStore`] under a dotted prefix and runs on a [`Graph`](crate::Graph)
//! given the bound variables.

mod cbam;
mod convnext;
mod danet;
mod params;
mod stem;
mod transformer;
mod verify;

pub use cbam::{Cbam, SPATIAL_KERNEL};
pub use convnext::{ConvNextBlock, Grn, DW_KERNEL, EXPANSION, LAYER_SCALE_INIT};
pub use danet::Danet;
pub use params::{Bound, Init, ParamId, ParamStore};
pub use stem::{Downsample, Stem, PATCH};
pub use transformer::{TransformerBlock, MLP_RATIO};
pub use verify::check_block;
