use serde::{Deserialize, Serialize};

use super::layers::{Conv, Init, LayerKind, LayerSpec, Linear, ParamStore, INSTANCE_NORM_EPS};
use super::{Graph, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

fn norm_lrelu(g: &mut Graph, x: Var, slope: f64) -> Result<Var> {
    let n = g.instance_norm(x, INSTANCE_NORM_EPS)?;
    g.leaky_relu(n, slope)
}

fn check_size(size: usize) -> Result<()> {
    if size < 32 || !size.is_power_of_two() {
        return Err(Error::invalid(format!("network size must be a power of two >= 32, got {size}")));
    }
    Ok(())
}

fn check_input(g: &Graph, x: Var, channels: usize, multiple: usize, ctx: &'static str) -> Result<()> {
    match *g.shape(x) {
        [_, c, h, w] if c == channels && h % multiple == 0 && w % multiple == 0 && h >= multiple && w >= multiple => Ok(()),
        _ => Err(Error::dims(
            ctx,
            format!("[n, {channels}, h, w] with h, w multiples of {multiple}"),
            g.shape(x).to_vec(),
        )),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    /// Channels at full resolution; doubled at each level.
    pub base_width: usize,
    /// Number of resolution levels.
    pub depth: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            in_channels: 3,
            base_width: 32,
            depth: 4,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 || self.depth < 2 {
            return Err(Error::invalid(format!("generator config {self:?}: need channels, width >= 1 and depth >= 2")));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.depth).map(|l| self.base_width << l).collect()
    }
}

/// U-Net over `[slice; warped predecessor; warped successor]` with a global
/// residual on the first input channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet {
    pub config: GeneratorConfig,
    pub params: ParamStore,
    stem: Conv,
    down: Vec<(Conv, Conv)>,
    up: Vec<(Conv, Conv)>,
    head: Conv,
}

impl GeneratorNet {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let c = config.widths();
        let stem = Conv::new(LayerSpec::conv(config.in_channels, c[0], 3, 1), false, "enc0", &mut params, &mut init)?;
        let mut down = Vec::new();
        for l in 1..config.depth {
            let a = Conv::new(LayerSpec::conv(c[l - 1], c[l], 3, 2), false, &format!("enc{l}.down"), &mut params, &mut init)?;
            let b = Conv::new(LayerSpec::conv(c[l], c[l], 3, 1), false, &format!("enc{l}.conv"), &mut params, &mut init)?;
            down.push((a, b));
        }
        let mut up = Vec::new();
        for l in (1..config.depth).rev() {
            let a = Conv::new(LayerSpec::conv_transpose(c[l], c[l - 1], 4, 2), false, &format!("dec{l}.up"), &mut params, &mut init)?;
            let b = Conv::new(LayerSpec::conv(2 * c[l - 1], c[l - 1], 3, 1), false, &format!("dec{l}.conv"), &mut params, &mut init)?;
            up.push((a, b));
        }
        let head = Conv::new(LayerSpec::conv(c[0], 1, 1, 1), true, "head", &mut params, &mut init)?;
        Ok(GeneratorNet {
            config,
            params,
            stem,
            down,
            up,
            head,
        })
    }

    /// Zeroes the output layer so the network returns its first input channel.
    pub fn make_identity(&mut self) {
        self.params.get_mut(self.head.weight).data.iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = self.head.bias {
            self.params.get_mut(b).data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Spatial extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.config.depth - 1)
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = vec![self.stem.spec];
        for (a, b) in &self.down {
            out.extend([a.spec, b.spec]);
        }
        for (a, b) in &self.up {
            let skip = LayerSpec::elementwise(LayerKind::ConcatSkip, b.spec.in_channels, 0.0);
            out.extend([a.spec, skip, b.spec]);
        }
        out.push(self.head.spec);
        out
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        check_input(g, x, self.config.in_channels, self.size_multiple(), "generator input")?;
        let h = self.stem.forward(g, p, x)?;
        let mut h = norm_lrelu(g, h, LEAKY_SLOPE)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for (a, b) in &self.down {
            skips.push(h);
            let t = a.forward(g, p, h)?;
            let t = norm_lrelu(g, t, LEAKY_SLOPE)?;
            let t = b.forward(g, p, t)?;
            h = norm_lrelu(g, t, LEAKY_SLOPE)?;
        }
        for (a, b) in &self.up {
            let t = a.forward(g, p, h)?;
            let t = norm_lrelu(g, t, 0.0)?;
            let t = g.concat(t, skips.pop().unwrap())?;
            let t = b.forward(g, p, t)?;
            h = norm_lrelu(g, t, 0.0)?;
        }
        let residual = self.head.forward(g, p, h)?;
        let base = g.channel(x, 0)?;
        g.add(base, residual)
    }
}

pub fn build_generator(size: usize, seed: u64) -> Result<GeneratorNet> {
    check_size(size)?;
    GeneratorNet::new(GeneratorConfig::default(), seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub base_width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { base_width: 32 }
    }
}

pub const DISCRIMINATOR_BLOCKS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
struct ResBlock {
    down: Conv,
    body: [Conv; 3],
    normalized: bool,
}

/// Output of a discriminator pass.
#[derive(Clone, Debug)]
pub struct DiscriminatorOutput {
    /// `[n, 1]` probabilities of "real".
    pub prob: Var,
    /// One feature map per residual block.
    pub taps: Vec<Var>,
}

/// Anything that exposes hidden feature maps for a perceptual loss.
pub trait FeatureTaps {
    fn params(&self) -> &ParamStore;
    fn taps(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Vec<Var>>;
}

/// Three strided residual blocks of four convolutions, global average
/// pooling and a sigmoid head.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorNet {
    pub config: DiscriminatorConfig,
    pub params: ParamStore,
    blocks: Vec<ResBlock>,
    head: Linear,
}

impl DiscriminatorNet {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.base_width == 0 {
            return Err(Error::invalid("discriminator width must be >= 1"));
        }
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let mut blocks = Vec::new();
        let mut cin = 1;
        for j in 0..DISCRIMINATOR_BLOCKS {
            let c = config.base_width << j;
            let normalized = j + 1 < DISCRIMINATOR_BLOCKS;
            let mk = |spec, name: String, params: &mut ParamStore, init: &mut Init| {
                Conv::new(spec, !normalized, &name, params, init)
            };
            let down = mk(LayerSpec::conv(cin, c, 3, 2), format!("block{j}.down"), &mut params, &mut init)?;
            let body = [
                mk(LayerSpec::conv(c, c, 3, 1), format!("block{j}.conv1"), &mut params, &mut init)?,
                mk(LayerSpec::conv(c, c, 3, 1), format!("block{j}.conv2"), &mut params, &mut init)?,
                mk(LayerSpec::conv(c, c, 3, 1), format!("block{j}.conv3"), &mut params, &mut init)?,
            ];
            blocks.push(ResBlock { down, body, normalized });
            cin = c;
        }
        let head = Linear::new(cin, 1, "head", &mut params, &mut init);
        Ok(DiscriminatorNet {
            config,
            params,
            blocks,
            head,
        })
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        for b in &self.blocks {
            let c = b.down.spec.out_channels;
            out.push(b.down.spec);
            out.push(LayerSpec::elementwise(LayerKind::ResidualBlock, c, LEAKY_SLOPE));
            out.extend(b.body.iter().map(|l| l.spec));
        }
        out.push(LayerSpec::elementwise(LayerKind::Sigmoid, 1, 0.0));
        out
    }

    fn act(&self, g: &mut Graph, block: &ResBlock, x: Var) -> Result<Var> {
        if block.normalized {
            norm_lrelu(g, x, LEAKY_SLOPE)
        } else {
            g.leaky_relu(x, LEAKY_SLOPE)
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<DiscriminatorOutput> {
        check_input(g, x, 1, 1 << DISCRIMINATOR_BLOCKS, "discriminator input")?;
        let mut h = x;
        let mut taps = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let t = b.down.forward(g, p, h)?;
            let h1 = self.act(g, b, t)?;
            let t = b.body[0].forward(g, p, h1)?;
            let t = self.act(g, b, t)?;
            let t = b.body[1].forward(g, p, t)?;
            let t = self.act(g, b, t)?;
            let t = b.body[2].forward(g, p, t)?;
            let t = if b.normalized { g.instance_norm(t, INSTANCE_NORM_EPS)? } else { t };
            let s = g.add(h1, t)?;
            h = g.leaky_relu(s, LEAKY_SLOPE)?;
            taps.push(h);
        }
        let pooled = g.global_avg_pool(h)?;
        let logit = self.head.forward(g, p, pooled)?;
        let prob = g.sigmoid(logit)?;
        Ok(DiscriminatorOutput { prob, taps })
    }
}

impl FeatureTaps for DiscriminatorNet {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn taps(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Vec<Var>> {
        Ok(self.forward(g, p, x)?.taps)
    }
}

pub fn build_discriminator(size: usize, seed: u64) -> Result<DiscriminatorNet> {
    check_size(size)?;
    DiscriminatorNet::new(DiscriminatorConfig::default(), seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowNetConfig {
    pub base_width: usize,
}

impl Default for FlowNetConfig {
    fn default() -> Self {
        FlowNetConfig { base_width: 16 }
    }
}

/// Encoder of six convolutions (strides 2, 1, 2, 1, 2, 1) and decoder of six
/// transposed convolutions mapping a stacked slice pair to `(u, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowNetLite {
    pub config: FlowNetConfig,
    pub params: ParamStore,
    encoder: Vec<Conv>,
    decoder: Vec<Conv>,
}

impl FlowNetLite {
    pub fn new(config: FlowNetConfig, seed: u64) -> Result<Self> {
        if config.base_width == 0 {
            return Err(Error::invalid("flow net width must be >= 1"));
        }
        let c = config.base_width;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let enc = [
            LayerSpec::conv(2, c, 3, 2),
            LayerSpec::conv(c, c, 3, 1),
            LayerSpec::conv(c, 2 * c, 3, 2),
            LayerSpec::conv(2 * c, 2 * c, 3, 1),
            LayerSpec::conv(2 * c, 4 * c, 3, 2),
            LayerSpec::conv(4 * c, 4 * c, 3, 1),
        ];
        let dec = [
            LayerSpec::conv_transpose(4 * c, 4 * c, 3, 1),
            LayerSpec::conv_transpose(4 * c, 2 * c, 4, 2),
            LayerSpec::conv_transpose(2 * c, 2 * c, 3, 1),
            LayerSpec::conv_transpose(2 * c, c, 4, 2),
            LayerSpec::conv_transpose(c, c, 3, 1),
            LayerSpec::conv_transpose(c, 2, 4, 2),
        ];
        let encoder = enc
            .iter()
            .enumerate()
            .map(|(i, s)| Conv::new(*s, false, &format!("enc{i}"), &mut params, &mut init))
            .collect::<Result<_>>()?;
        let decoder = dec
            .iter()
            .enumerate()
            .map(|(i, s)| Conv::new(*s, i + 1 == dec.len(), &format!("dec{i}"), &mut params, &mut init))
            .collect::<Result<_>>()?;
        Ok(FlowNetLite {
            config,
            params,
            encoder,
            decoder,
        })
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        self.encoder.iter().chain(&self.decoder).map(|c| c.spec).collect()
    }

    /// `pair` is `[n, 2, h, w]`; returns `[n, 2, h, w]` backward displacements.
    pub fn forward(&self, g: &mut Graph, p: &[Var], pair: Var) -> Result<Var> {
        check_input(g, pair, 2, 8, "flow net input")?;
        let mut h = pair;
        for l in &self.encoder {
            let t = l.forward(g, p, h)?;
            h = norm_lrelu(g, t, LEAKY_SLOPE)?;
        }
        let last = self.decoder.len() - 1;
        for (i, l) in self.decoder.iter().enumerate() {
            let t = l.forward(g, p, h)?;
            h = if i == last { t } else { norm_lrelu(g, t, 0.0)? };
        }
        Ok(h)
    }
}

pub fn build_flownet(size: usize, seed: u64) -> Result<FlowNetLite> {
    check_size(size)?;
    FlowNetLite::new(FlowNetConfig::default(), seed)
}
