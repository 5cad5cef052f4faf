//! Post-hoc explanations: gradient-weighted class activation maps and
//! LIME surrogates over grid superpixels, plus heatmap overlays.

mod gradcam;
mod lime;
mod overlay;

pub use gradcam::{
    cam_from_gradients, cam_pp_from_gradients, grad_cam, grad_cam_pp, tap_gradients, upsample_normalized, Method,
    Saliency,
};
pub use lime::{
    cosine_distance_to_ones, lime_explain, lime_model, perturb, replacement_image, segment_grid, weighted_ridge,
    LimeConfig, LimeExplanation, Replacement, SegmentMask,
};
pub use overlay::{jet, lime_mask, render_lime_overlay, render_overlay, write_overlay, OVERLAY_ALPHA};
