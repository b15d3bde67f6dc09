//! Parallel-beam tomography: the forward operator, its adjoint, measurement
//! noise and filtered backprojection.

mod fbp;
mod geometry;
mod image;
mod noise;
mod project;
mod sinogram;

pub use fbp::{fbp, filter_sinogram, padded_len, ramp_response, FilterWindow};
pub use geometry::ScanGeometry;
pub use image::Image;
pub use noise::{add_noise, NoiseSpec};
pub use project::{back_project, forward_project, ray_support, RAY_STEP};
pub use sinogram::Sinogram;
