//! Local-coherence optical flow between adjacent slices and backward warping.

mod estimate;
mod field;
mod viz;
mod warp;

pub use estimate::{
    constancy_residual, estimate_flow, gradients, hs_objective, GradientTriple, DEFAULT_ALPHA,
    DEFAULT_ITERS,
};
pub use field::FlowField;
pub use viz::{arrow_overlay, magnitude_heatmap};
pub use warp::{bilinear_taps, warp, BilinearTaps};
