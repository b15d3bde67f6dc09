use super::{FlowMode, NeighborSet, TrainConfig};
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, FlowField};
use crate::nn::{image_input, to_image, FlowNetConfig, FlowNetLite, GeneratorNet, Graph, ParamStore, Var};
use crate::tomo::Image;

/// Source of the neighbour-to-slice motion `F(n, s)`.
#[derive(Clone, Debug, PartialEq)]
pub enum FlowEstimator {
    Classic { alpha: f64, iters: usize },
    Learned(FlowNetLite),
    Zero,
}

impl FlowEstimator {
    pub fn from_config(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        Ok(match cfg.flow_mode {
            FlowMode::Classic => FlowEstimator::Classic {
                alpha: cfg.flow_alpha,
                iters: cfg.flow_iters,
            },
            FlowMode::Learned => FlowEstimator::Learned(FlowNetLite::new(cfg.flownet, seed)?),
            FlowMode::None => FlowEstimator::Zero,
        })
    }

    pub fn learned(config: FlowNetConfig, seed: u64) -> Result<Self> {
        Ok(FlowEstimator::Learned(FlowNetLite::new(config, seed)?))
    }

    pub fn mode(&self) -> FlowMode {
        match self {
            FlowEstimator::Classic { .. } => FlowMode::Classic,
            FlowEstimator::Learned(_) => FlowMode::Learned,
            FlowEstimator::Zero => FlowMode::None,
        }
    }

    /// Backward displacement taking `neighbor` onto `s`, so that
    /// `warp(neighbor, flow)` approximates `s`.
    pub fn estimate(&self, neighbor: &Image, s: &Image) -> Result<FlowField> {
        neighbor.same_shape(s, "flow estimate")?;
        let (h, w) = s.shape();
        match self {
            FlowEstimator::Classic { alpha, iters } => estimate_flow(neighbor, s, *alpha, *iters),
            FlowEstimator::Zero => Ok(FlowField::zeros(h, w)),
            FlowEstimator::Learned(net) => {
                let mut g = Graph::new();
                let p = net.params.bind(&mut g, false)?;
                let pair = pair_input(&mut g, neighbor, s)?;
                let out = net.forward(&mut g, &p, pair)?;
                FlowField::from_planar(h, w, g.data(out))
            }
        }
    }

    pub fn params(&self) -> Option<&ParamStore> {
        match self {
            FlowEstimator::Learned(net) => Some(&net.params),
            _ => None,
        }
    }
}

/// `[1, 2, h, w]` constant `[neighbor; s]`.
pub(crate) fn pair_input(g: &mut Graph, neighbor: &Image, s: &Image) -> Result<Var> {
    let (h, w) = s.shape();
    let data = neighbor.data().iter().chain(s.data()).copied().collect();
    g.constant(vec![1, 2, h, w], data)
}

pub(crate) fn flow_input(g: &mut Graph, flow: &FlowField) -> Result<Var> {
    let (h, w) = flow.shape();
    g.constant(vec![1, 2, h, w], flow.to_planar())
}

/// Phase one: `G([x; x; x])`, the slice standing in for its own warped
/// neighbours.
pub fn self_conditioned(gen: &GeneratorNet, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
    let xx = g.concat(x, x)?;
    let input = g.concat(xx, x)?;
    gen.forward(g, p, input)
}

/// Phase two: `G([s; w_prev; w_next])`, a lone neighbour filling both slots.
pub fn coherent_pass(gen: &GeneratorNet, g: &mut Graph, p: &[Var], s: Var, warped: &[Var]) -> Result<Var> {
    let (a, b) = match *warped {
        [a] => (a, a),
        [a, b] => (a, b),
        _ => return Err(Error::invalid(format!("expected 1 or 2 warped neighbours, got {}", warped.len()))),
    };
    let sa = g.concat(s, a)?;
    let input = g.concat(sa, b)?;
    gen.forward(g, p, input)
}

/// Graph nodes of one two-phase reconstruction.
#[derive(Clone, Debug)]
pub struct CoherentNodes {
    pub generated_neighbors: Vec<Var>,
    pub warped: Vec<Var>,
    pub output: Var,
}

/// Builds both phases on `g`. With `detach_neighbors` the phase-one outputs
/// enter phase two as constants.
pub fn reconstruct_nodes(
    gen: &GeneratorNet,
    g: &mut Graph,
    p: &[Var],
    s: &Image,
    neighbors: &NeighborSet,
    flows: &[FlowField],
    detach_neighbors: bool,
) -> Result<CoherentNodes> {
    if flows.len() != neighbors.len() {
        return Err(Error::dims("reconstruct flows", neighbors.len(), flows.len()));
    }
    if neighbors.shape() != s.shape() {
        return Err(Error::dims("reconstruct neighbours", s.shape(), neighbors.shape()));
    }
    let mut generated = Vec::with_capacity(neighbors.len());
    let mut warped = Vec::with_capacity(neighbors.len());
    for (n, f) in neighbors.slices().iter().zip(flows) {
        if f.shape() != s.shape() {
            return Err(Error::dims("reconstruct flow", s.shape(), f.shape()));
        }
        let x = image_input(g, n)?;
        let mut xg = self_conditioned(gen, g, p, x)?;
        if detach_neighbors {
            xg = g.detach(xg)?;
        }
        let fv = flow_input(g, f)?;
        generated.push(xg);
        warped.push(g.warp(xg, fv)?);
    }
    let sv = image_input(g, s)?;
    let output = coherent_pass(gen, g, p, sv, &warped)?;
    Ok(CoherentNodes {
        generated_neighbors: generated,
        warped,
        output,
    })
}

/// Flows from each neighbour onto `s`, estimated on the low-dose pair.
pub fn neighbor_flows(f_est: &FlowEstimator, s: &Image, neighbors: &NeighborSet) -> Result<Vec<FlowField>> {
    neighbors.slices().iter().map(|n| f_est.estimate(n, s)).collect()
}

/// `N(x^g) = G(N(s))` with every neighbour self-conditioned.
pub fn generate_neighbors(gen: &GeneratorNet, neighbors: &NeighborSet) -> Result<NeighborSet> {
    let mut g = Graph::new();
    let p = gen.params.bind(&mut g, false)?;
    let out = neighbors
        .slices()
        .iter()
        .map(|n| {
            let x = image_input(&mut g, n)?;
            let y = self_conditioned(gen, &mut g, &p, x)?;
            to_image(&g, y)
        })
        .collect::<Result<Vec<_>>>()?;
    NeighborSet::new(out)
}

/// Warped generated neighbours that feed the coherent pass.
pub fn coherence_inputs(gen: &GeneratorNet, f_est: &FlowEstimator, s: &Image, neighbors: &NeighborSet) -> Result<Vec<Image>> {
    let flows = neighbor_flows(f_est, s, neighbors)?;
    let mut g = Graph::new();
    let p = gen.params.bind(&mut g, false)?;
    let nodes = reconstruct_nodes(gen, &mut g, &p, s, neighbors, &flows, true)?;
    nodes.warped.iter().map(|&v| to_image(&g, v)).collect()
}

/// `x^g = G(s, W(N(x^g)))` through the two-phase scheme.
pub fn reconstruct(gen: &GeneratorNet, f_est: &FlowEstimator, s: &Image, neighbors: &NeighborSet) -> Result<Image> {
    let flows = neighbor_flows(f_est, s, neighbors)?;
    let mut g = Graph::new();
    let p = gen.params.bind(&mut g, false)?;
    let nodes = reconstruct_nodes(gen, &mut g, &p, s, neighbors, &flows, true)?;
    to_image(&g, nodes.output)
}

/// Reconstructs an ordered stack. Phase one runs once per slice and is
/// shared by both neighbours of it; a single slice neighbours itself.
pub fn infer_volume(gen: &GeneratorNet, f_est: &FlowEstimator, slices: &[Image]) -> Result<Vec<Image>> {
    if slices.is_empty() {
        return Err(Error::invalid("infer_volume needs at least one slice"));
    }
    for s in slices {
        s.same_shape(&slices[0], "infer_volume")?;
    }
    let mut g = Graph::new();
    let p = gen.params.bind(&mut g, false)?;
    let phase1 = slices
        .iter()
        .map(|s| {
            let x = image_input(&mut g, s)?;
            let y = self_conditioned(gen, &mut g, &p, x)?;
            to_image(&g, y)
        })
        .collect::<Result<Vec<_>>>()?;
    drop(g);
    let n = slices.len();
    (0..n)
        .map(|i| {
            let idx: Vec<usize> = match (i > 0, i + 1 < n) {
                (true, true) => vec![i - 1, i + 1],
                (true, false) => vec![i - 1],
                (false, true) => vec![i + 1],
                (false, false) => vec![i],
            };
            let mut g = Graph::new();
            let p = gen.params.bind(&mut g, false)?;
            let mut warped = Vec::with_capacity(idx.len());
            for j in idx {
                let f = f_est.estimate(&slices[j], &slices[i])?;
                let x = image_input(&mut g, &phase1[j])?;
                let fv = flow_input(&mut g, &f)?;
                warped.push(g.warp(x, fv)?);
            }
            let sv = image_input(&mut g, &slices[i])?;
            let out = coherent_pass(gen, &mut g, &p, sv, &warped)?;
            to_image(&g, out)
        })
        .collect()
}
