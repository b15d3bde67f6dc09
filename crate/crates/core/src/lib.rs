//! Low-dose CT reconstruction with a generative adversarial network that
//! exploits the coherence between adjacent slices.
//!
//! The pipeline is split into independent layers:
//!
//! + [`tomo`]: parallel-beam projector, its adjoint, noise injection and
//!   filtered backprojection.
//! + [`flow`]: inter-slice optical flow (Horn–Schunck or a small learned
//!   encoder–decoder) and bilinear backward warping.
//! + [`nn`]: a tape-based reverse-mode autodiff engine with the layers and
//!   networks used by the GAN.
//! + [`gan`]: the two-phase generation scheme, the adversarial, pixel and
//!   perceptual objectives, and the training loop.
//! + [`metrics`]: PSNR and SSIM.
//! + [`sim`]: synthetic phantom volumes and low-dose dataset construction.
//! + [`io`]: the `CTLC` binary container and PNG export.

pub mod error;
pub mod flow;
pub mod gan;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod sim;
pub mod tomo;

pub use error::{Error, Result};
pub use tomo::{Image, ScanGeometry, Sinogram};
