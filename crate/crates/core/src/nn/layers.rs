use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::Bundle;

/// Standard deviation of the Gaussian weight initialisation.
pub const INIT_STD: f64 = 0.02;
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `g` as a leaf; `trainable = false` binds
    /// them as constants so no gradient is tracked.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
        self.tensors
            .iter()
            .map(|t| {
                g.leaf(Tensor {
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                    grad: None,
                    requires_grad: trainable,
                })
            })
            .collect()
    }

    /// Adds the gradients held by `g` for `vars` (from [`ParamStore::bind`]).
    pub fn accumulate(&mut self, g: &Graph, vars: &[Var]) {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            if let Some(grad) = g.grad(v) {
                t.accumulate_grad(grad);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| t.data.clone()).collect()
    }

    pub fn export(&self, prefix: &str, bundle: &mut Bundle) {
        for (name, t) in self.names.iter().zip(&self.tensors) {
            bundle.push(format!("{prefix}{name}"), t.shape.clone(), t.data.clone());
        }
    }

    /// Loads every parameter from `bundle`; names and shapes must match.
    pub fn import(&mut self, prefix: &str, bundle: &Bundle) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let key = format!("{prefix}{name}");
            let (shape, data) = bundle
                .get(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter '{key}'")))?;
            if shape != t.shape.as_slice() {
                return Err(Error::dims("checkpoint parameter", t.shape.clone(), shape.to_vec()));
            }
            t.data.copy_from_slice(data);
            t.grad = None;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    LeakyRelu,
    Relu,
    Sigmoid,
    InstanceNorm,
    ConcatSkip,
    ResidualBlock,
}

/// Static description of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub negative_slope: f64,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            stride,
            in_channels,
            out_channels,
            negative_slope: 0.0,
        }
    }

    pub fn conv_transpose(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::ConvTranspose,
            ..LayerSpec::conv(in_channels, out_channels, kernel, stride)
        }
    }

    pub fn elementwise(kind: LayerKind, channels: usize, negative_slope: f64) -> Self {
        LayerSpec {
            kind,
            kernel: 1,
            stride: 1,
            in_channels: channels,
            out_channels: channels,
            negative_slope,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid(format!("invalid layer spec {self:?}")));
        }
        if self.kind == LayerKind::LeakyRelu && !(self.negative_slope >= 0.0 && self.negative_slope < 1.0) {
            return Err(Error::invalid(format!("leaky relu slope {} outside [0, 1)", self.negative_slope)));
        }
        Ok(())
    }

    /// Padding used by this layer: "same" for odd kernels at stride 1, and
    /// exact halving/doubling for the strided cases.
    pub fn padding(&self) -> usize {
        match self.kind {
            LayerKind::ConvTranspose if self.stride > 1 => (self.kernel - self.stride) / 2,
            _ => (self.kernel - 1) / 2,
        }
    }
}

/// Seeded source of initial parameter values.
pub struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).unwrap(),
        }
    }

    pub fn gaussian(&mut self, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.normal.sample(&mut self.rng)).collect();
        Tensor::new(shape, data).unwrap()
    }
}

/// Convolution or transposed convolution with an optional bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub spec: LayerSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    pub fn new(spec: LayerSpec, bias: bool, name: &str, store: &mut ParamStore, init: &mut Init) -> Result<Self> {
        spec.validate()?;
        let LayerSpec { kernel: k, in_channels: cin, out_channels: cout, .. } = spec;
        let shape = match spec.kind {
            LayerKind::Conv => vec![cout, cin, k, k],
            LayerKind::ConvTranspose => vec![cin, cout, k, k],
            other => return Err(Error::invalid(format!("{other:?} is not a convolution"))),
        };
        let weight = store.add(format!("{name}.weight"), init.gaussian(shape));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(vec![cout])));
        Ok(Conv { spec, weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let (w, b) = (p[self.weight.0], self.bias.map(|b| p[b.0]));
        let pad = self.spec.padding();
        match self.spec.kind {
            LayerKind::ConvTranspose => g.conv_transpose2d(x, w, b, self.spec.stride, pad),
            _ => g.conv2d(x, w, b, self.spec.stride, pad),
        }
    }
}

/// Dense layer `[n, in] -> [n, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(cin: usize, cout: usize, name: &str, store: &mut ParamStore, init: &mut Init) -> Self {
        let weight = store.add(format!("{name}.weight"), init.gaussian(vec![cout, cin]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        g.linear(x, p[self.weight.0], p[self.bias.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::conv(1, 1, 0, 1).validate().is_err());
        assert!(LayerSpec::conv(1, 1, 3, 0).validate().is_err());
        assert!(LayerSpec::conv(0, 1, 3, 1).validate().is_err());
        assert!(LayerSpec::elementwise(LayerKind::LeakyRelu, 4, 1.5).validate().is_err());
        assert_eq!(LayerSpec::conv_transpose(4, 2, 4, 2).padding(), 1);
        assert_eq!(LayerSpec::conv(4, 2, 3, 2).padding(), 1);
    }

    #[test]
    fn init_is_seeded() {
        let a = Init::new(5).gaussian(vec![3, 3]);
        let b = Init::new(5).gaussian(vec![3, 3]);
        let c = Init::new(6).gaussian(vec![3, 3]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let t = Init::new(1).gaussian(vec![10000]);
        let sd = (t.data.iter().map(|v| v * v).sum::<f64>() / 10000.0).sqrt();
        assert!((sd - INIT_STD).abs() < 0.001);
    }

    #[test]
    fn bundle_round_trip_checks_shapes() {
        let mut store = ParamStore::new();
        let mut init = Init::new(0);
        store.add("a", init.gaussian(vec![2, 2]));
        let mut b = Bundle::default();
        store.export("net.", &mut b);
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros(vec![2, 2]));
        other.import("net.", &b).unwrap();
        assert_eq!(other.tensors()[0].data, store.tensors()[0].data);
        let mut wrong = ParamStore::new();
        wrong.add("a", Tensor::zeros(vec![4]));
        assert!(wrong.import("net.", &b).is_err());
        assert!(other.import("other.", &b).is_err());
    }
}
