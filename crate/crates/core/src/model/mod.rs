//! The assembled network: configuration, construction, forward pass,
//! parameter census and checkpoints.

mod assembly;
mod census;
mod checkpoint;
mod config;

pub use assembly::{
    build_model, build_seeded, softmax_rows, split_batch, stack_images, ConMatFormer, ImageForward, Stage, StageFive,
    Tap,
};
pub use census::{
    convnext_block_params, count_params_macs, ParamReport, ParamRow, REFERENCE_TOTAL_MACS, REFERENCE_TOTAL_PARAMS,
};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{kv_lines, Ablation, ModelConfig};
