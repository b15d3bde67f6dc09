use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, DiscriminatorConfig, FlowNetConfig, GeneratorConfig};
use crate::tomo::Image;

/// Adjacent slices of one slice: predecessor then successor, or the single
/// neighbour at a volume boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    slices: Vec<Image>,
}

impl NeighborSet {
    pub fn new(slices: Vec<Image>) -> Result<Self> {
        if !(1..=2).contains(&slices.len()) {
            return Err(Error::invalid(format!("a neighbour set holds 1 or 2 slices, got {}", slices.len())));
        }
        if slices.len() == 2 {
            slices[0].same_shape(&slices[1], "NeighborSet")?;
        }
        Ok(NeighborSet { slices })
    }

    /// Neighbours of index `i` in `stack` by the boundary rule: both
    /// adjacent slices in the interior, the single adjacent one at either
    /// end, and the slice itself when the stack has one slice.
    pub fn of(stack: &[Image], i: usize) -> Result<Self> {
        let n = stack.len();
        if i >= n {
            return Err(Error::invalid(format!("slice {i} out of range for {n}")));
        }
        let slices = match (i > 0, i + 1 < n) {
            (true, true) => vec![stack[i - 1].clone(), stack[i + 1].clone()],
            (true, false) => vec![stack[i - 1].clone()],
            (false, true) => vec![stack[i + 1].clone()],
            (false, false) => vec![stack[i].clone()],
        };
        NeighborSet::new(slices)
    }

    pub fn slices(&self) -> &[Image] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> (usize, usize) {
        self.slices[0].shape()
    }
}

/// One training example: the low-dose recovery `s`, its neighbours and the
/// standard-dose target.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceBatch {
    pub index: usize,
    pub s: Image,
    pub neighbors: NeighborSet,
    pub target: Image,
}

impl SliceBatch {
    pub fn new(index: usize, s: Image, neighbors: NeighborSet, target: Image) -> Result<Self> {
        s.same_shape(&target, "SliceBatch target")?;
        if neighbors.shape() != s.shape() {
            return Err(Error::dims("SliceBatch neighbours", s.shape(), neighbors.shape()));
        }
        Ok(SliceBatch {
            index,
            s,
            neighbors,
            target,
        })
    }

    /// Batches for a contiguous stack with the boundary neighbour rule.
    pub fn from_stack(recoveries: &[Image], targets: &[Image], first_index: usize) -> Result<Vec<Self>> {
        if recoveries.len() != targets.len() {
            return Err(Error::dims("SliceBatch::from_stack", recoveries.len(), targets.len()));
        }
        (0..recoveries.len())
            .map(|i| {
                SliceBatch::new(
                    first_index + i,
                    recoveries[i].clone(),
                    NeighborSet::of(recoveries, i)?,
                    targets[i].clone(),
                )
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_pix: f64,
    pub lambda_adv: f64,
    pub lambda_per: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_pix: 1.0,
            lambda_adv: 0.01,
            lambda_per: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_pix", self.lambda_pix), ("lambda_adv", self.lambda_adv), ("lambda_per", self.lambda_per)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Pixel loss in 8-bit grey levels.
pub const DEFAULT_INTENSITY_SCALE: f64 = 255.0;

/// How tap differences are reduced inside the generator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualReduction {
    /// L1 summed over every tap element.
    #[default]
    Sum,
    /// L1 of each tap divided by its element count, then summed over taps.
    TapMean,
}

impl std::str::FromStr for PerceptualReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(PerceptualReduction::Sum),
            "tap_mean" => Ok(PerceptualReduction::TapMean),
            other => Err(Error::invalid(format!("unknown perceptual reduction '{other}'"))),
        }
    }
}

/// Horn–Schunck smoothness and sweeps for flows estimated on noisy FBP pairs.
pub const LOW_DOSE_FLOW_ALPHA: f64 = 0.5;
pub const LOW_DOSE_FLOW_ITERS: usize = 200;

/// How neighbour-to-slice motion is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    /// Horn–Schunck on the low-dose pair, frozen.
    #[default]
    Classic,
    /// The flow net, co-trained on a photometric loss.
    Learned,
    /// Zero flow: the warping ablation.
    None,
}

impl FlowMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowMode::Classic => "classic",
            FlowMode::Learned => "learned",
            FlowMode::None => "none",
        }
    }
}

impl std::str::FromStr for FlowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(FlowMode::Classic),
            "learned" => Ok(FlowMode::Learned),
            "none" => Ok(FlowMode::None),
            other => Err(Error::invalid(format!("unknown flow mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub perceptual_reduction: PerceptualReduction,
    /// Grey levels per unit intensity in which the pixel loss is measured.
    pub intensity_scale: f64,
    pub flow_mode: FlowMode,
    pub adam: AdamConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub flownet: FlowNetConfig,
    /// Horn–Schunck smoothness and sweeps for classic mode.
    pub flow_alpha: f64,
    pub flow_iters: usize,
    /// Weight of the photometric loss in learned mode.
    pub photometric_weight: f64,
    /// Whether generator gradients flow through the neighbour pass.
    pub backprop_neighbors: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 4,
            seed: 0,
            weights: LossWeights::default(),
            perceptual_reduction: PerceptualReduction::TapMean,
            intensity_scale: DEFAULT_INTENSITY_SCALE,
            flow_mode: FlowMode::Classic,
            adam: AdamConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            flownet: FlowNetConfig::default(),
            flow_alpha: LOW_DOSE_FLOW_ALPHA,
            flow_iters: LOW_DOSE_FLOW_ITERS,
            photometric_weight: 1.0,
            backprop_neighbors: true,
        }
    }
}

impl TrainConfig {
    pub fn objective_scale(&self) -> super::ObjectiveScale {
        super::ObjectiveScale {
            perceptual: self.perceptual_reduction,
            intensity: self.intensity_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.flow_alpha > 0.0) || self.flow_iters == 0 {
            return Err(Error::invalid("flow_alpha must be > 0 and flow_iters >= 1"));
        }
        if !(self.intensity_scale > 0.0 && self.intensity_scale.is_finite()) {
            return Err(Error::invalid("intensity_scale must be > 0"));
        }
        if !(self.photometric_weight >= 0.0) {
            return Err(Error::invalid("photometric_weight must be >= 0"));
        }
        if self.generator.in_channels != 3 {
            return Err(Error::invalid("the generator takes exactly 3 input channels"));
        }
        self.weights.validate()?;
        self.adam.validate()?;
        self.generator.validate()
    }
}
