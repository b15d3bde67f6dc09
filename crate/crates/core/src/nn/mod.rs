//! Reverse-mode automatic differentiation and the three networks built on it.

mod gradcheck;
mod graph;
mod kernels;
mod layers;
mod nets;
mod optim;
mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradCheck};
pub use graph::{Graph, Var};
pub use kernels::{col2im, gemm, im2col, Window};
pub use layers::{Conv, Init, LayerKind, LayerSpec, Linear, ParamId, ParamStore, INIT_STD, INSTANCE_NORM_EPS};
pub use nets::{
    build_discriminator, build_flownet, build_generator, DiscriminatorConfig, DiscriminatorNet,
    DiscriminatorOutput, FeatureTaps, FlowNetConfig, FlowNetLite, GeneratorConfig, GeneratorNet,
    DISCRIMINATOR_BLOCKS, LEAKY_SLOPE,
};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;

use crate::error::Result;
use crate::tomo::Image;

/// `[1, 1, h, w]` constant holding `img`.
pub fn image_input(g: &mut Graph, img: &Image) -> Result<Var> {
    g.constant(vec![1, 1, img.height(), img.width()], img.data().to_vec())
}

/// The single `[1, 1, h, w]` plane of `v` as an image.
pub fn to_image(g: &Graph, v: Var) -> Result<Image> {
    let s = g.shape(v);
    Image::new(s[s.len() - 2], s[s.len() - 1], g.data(v).to_vec())
}
