use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::{discriminator_objective, generator_objective, GeneratorLoss};
use super::model::{neighbor_flows, pair_input, reconstruct, reconstruct_nodes, FlowEstimator};
use super::{FlowMode, SliceBatch, TrainConfig};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::io::Bundle;
use crate::metrics::MetricReport;
use crate::nn::{image_input, to_image, Adam, DiscriminatorNet, GeneratorNet, Graph, Var};
use crate::seed::derive_seed;
use crate::tomo::Image;

pub const LOG_COLUMNS: &str = "epoch,loss_d,loss_pixel,loss_adv,loss_percept,val_psnr,val_ssim";
pub const CHECKPOINT_KIND: &str = "ganlc-checkpoint";

const STREAM_GENERATOR: u64 = 1;
const STREAM_DISCRIMINATOR: u64 = 2;
const STREAM_FLOW: u64 = 3;
const STREAM_SHUFFLE: u64 = 1 << 20;

/// Epoch means of the training losses and the held-out metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_pixel: f64,
    pub loss_adv: f64,
    pub loss_percept: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.6},{:.6}",
            self.epoch, self.loss_d, self.loss_pixel, self.loss_adv, self.loss_percept, self.val_psnr, self.val_ssim
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.loss_d, self.loss_pixel, self.loss_adv, self.loss_percept].iter().all(|v| v.is_finite())
    }
}

/// Header comment line naming the run, then the column line.
pub fn log_header(cfg: &TrainConfig) -> String {
    format!("# flow_mode={} seed={} epochs={}\n{LOG_COLUMNS}", cfg.flow_mode.as_str(), cfg.seed, cfg.epochs)
}

pub fn write_log(mut out: impl Write, cfg: &TrainConfig, rows: &[EpochLog]) -> Result<()> {
    writeln!(out, "{}", log_header(cfg))?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Networks, optimizers and the epoch counter of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct GanState {
    pub config: TrainConfig,
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub flow: FlowEstimator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub opt_f: Option<Adam>,
    pub epoch: usize,
}

/// Generator forward tape for one minibatch.
pub struct GeneratorPass {
    pub graph: Graph,
    pub params: Vec<Var>,
    pub outputs: Vec<Var>,
    pub targets: Vec<Var>,
}

impl GeneratorPass {
    pub fn generated(&self) -> Result<Vec<Image>> {
        self.outputs.iter().map(|&v| to_image(&self.graph, v)).collect()
    }
}

struct StepLosses {
    d: f64,
    g: GeneratorLoss<f64>,
}

impl GanState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = GeneratorNet::new(config.generator, derive_seed(config.seed, STREAM_GENERATOR))?;
        let discriminator = DiscriminatorNet::new(config.discriminator, derive_seed(config.seed, STREAM_DISCRIMINATOR))?;
        let flow = FlowEstimator::from_config(&config, derive_seed(config.seed, STREAM_FLOW))?;
        let opt_g = Adam::new(config.adam, &generator.params);
        let opt_d = Adam::new(config.adam, &discriminator.params);
        let opt_f = flow.params().map(|p| Adam::new(config.adam, p));
        Ok(GanState {
            config,
            generator,
            discriminator,
            flow,
            opt_g,
            opt_d,
            opt_f,
            epoch: 0,
        })
    }

    /// Flows for `batch`: classic or zero estimates, or the learned net's
    /// output after it is co-trained on this batch.
    pub fn batch_flows(&mut self, batch: &[&SliceBatch]) -> Result<Vec<Vec<FlowField>>> {
        self.flow_step(batch)
    }

    /// Co-trains the flow net on `mean |warp(n, F(n, s)) - s|` and returns
    /// the flows it produced before the update.
    fn flow_step(&mut self, batch: &[&SliceBatch]) -> Result<Vec<Vec<FlowField>>> {
        let FlowEstimator::Learned(net) = &mut self.flow else {
            return batch.iter().map(|b| neighbor_flows(&self.flow, &b.s, &b.neighbors)).collect();
        };
        let weight = self.config.photometric_weight;
        let count: usize = batch.iter().map(|b| b.neighbors.len()).sum();
        let mut g = Graph::new();
        let p = net.params.bind(&mut g, true)?;
        let mut flows = Vec::with_capacity(batch.len());
        let mut terms: Vec<Var> = Vec::with_capacity(count);
        for b in batch {
            let (h, w) = b.s.shape();
            let mut per = Vec::with_capacity(b.neighbors.len());
            for n in b.neighbors.slices() {
                let pair = pair_input(&mut g, n, &b.s)?;
                let f = net.forward(&mut g, &p, pair)?;
                per.push(FlowField::from_planar(h, w, g.data(f))?);
                let src = image_input(&mut g, n)?;
                let moved = g.warp(src, f)?;
                let target = image_input(&mut g, &b.s)?;
                let d = g.sub(moved, target)?;
                let d = g.abs(d)?;
                terms.push(g.mean(d)?);
            }
            flows.push(per);
        }
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = g.add(loss, t)?;
        }
        let loss = g.scale(loss, weight / count as f64)?;
        if weight > 0.0 {
            g.backward(loss)?;
            net.params.accumulate(&g, &p);
            self.opt_f.as_mut().expect("learned flow has an optimizer").step(&mut net.params)?;
        }
        Ok(flows)
    }

    /// Builds both phases for `batch` on a fresh tape with trainable
    /// generator parameters, using `flows[k]` for sample `k`.
    pub fn generator_pass(&self, batch: &[&SliceBatch], flows: &[Vec<FlowField>]) -> Result<GeneratorPass> {
        if flows.len() != batch.len() {
            return Err(Error::dims("generator pass flows", batch.len(), flows.len()));
        }
        let detach = !self.config.backprop_neighbors;
        let mut graph = Graph::new();
        let params = self.generator.params.bind(&mut graph, true)?;
        let mut outputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for (b, f) in batch.iter().zip(flows) {
            let nodes = reconstruct_nodes(&self.generator, &mut graph, &params, &b.s, &b.neighbors, f, detach)?;
            outputs.push(nodes.output);
            targets.push(image_input(&mut graph, &b.target)?);
        }
        Ok(GeneratorPass {
            graph,
            params,
            outputs,
            targets,
        })
    }

    /// One Adam step of the discriminator on `L_D`. The fakes are plain
    /// images, so nothing flows back to the generator.
    pub fn update_discriminator(&mut self, real: &[Image], fake: &[Image]) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.discriminator.params.bind(&mut g, true)?;
        let mut pr = Vec::with_capacity(real.len());
        let mut pf = Vec::with_capacity(fake.len());
        for x in real {
            let v = image_input(&mut g, x)?;
            pr.push(self.discriminator.forward(&mut g, &p, v)?.prob);
        }
        for x in fake {
            let v = image_input(&mut g, x)?;
            pf.push(self.discriminator.forward(&mut g, &p, v)?.prob);
        }
        let l = discriminator_objective(&mut g, &pr, &pf)?;
        g.backward(l)?;
        self.discriminator.params.accumulate(&g, &p);
        self.opt_d.step(&mut self.discriminator.params)?;
        Ok(g.scalar(l))
    }

    /// One Adam step of the generator on `L_G`, with the discriminator
    /// bound as constants.
    pub fn update_generator(&mut self, pass: GeneratorPass) -> Result<GeneratorLoss<f64>> {
        let GeneratorPass {
            mut graph,
            params,
            outputs,
            targets,
        } = pass;
        let pd = self.discriminator.params.bind(&mut graph, false)?;
        let scale = self.config.objective_scale();
        let lg = generator_objective(&self.discriminator, &mut graph, &pd, &outputs, &targets, &self.config.weights, scale)?;
        graph.backward(lg.total)?;
        self.generator.params.accumulate(&graph, &params);
        self.opt_g.step(&mut self.generator.params)?;
        Ok(lg.values(&graph))
    }

    fn step(&mut self, batch: &[&SliceBatch]) -> Result<StepLosses> {
        let flows = self.flow_step(batch)?;
        let pass = self.generator_pass(batch, &flows)?;
        let fake = pass.generated()?;
        let real: Vec<Image> = batch.iter().map(|b| b.target.clone()).collect();
        let d = self.update_discriminator(&real, &fake)?;
        let g = self.update_generator(pass)?;
        Ok(StepLosses { d, g })
    }

    /// One pass over `train` in a seeded order, then validation on `val`.
    pub fn train_epoch(&mut self, train: &[SliceBatch], val: &[SliceBatch]) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, STREAM_SHUFFLE + self.epoch as u64));
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut steps = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&SliceBatch> = chunk.iter().map(|&i| &train[i]).collect();
            let l = self.step(&batch)?;
            for (s, v) in sums.iter_mut().zip([l.d, l.g.pixel, l.g.adv, l.g.percept]) {
                *s += v;
            }
            steps += 1;
        }
        self.epoch += 1;
        let report = self.evaluate(val)?.0;
        let m = |i: usize| sums[i] / steps as f64;
        Ok(EpochLog {
            epoch: self.epoch,
            loss_d: m(0),
            loss_pixel: m(1),
            loss_adv: m(2),
            loss_percept: m(3),
            val_psnr: report.mean_psnr(),
            val_ssim: report.mean_ssim(),
        })
    }

    /// Reconstructions of `batches` and their metrics against the targets.
    pub fn evaluate(&self, batches: &[SliceBatch]) -> Result<(MetricReport, Vec<Image>)> {
        let recon = batches
            .iter()
            .map(|b| reconstruct(&self.generator, &self.flow, &b.s, &b.neighbors))
            .collect::<Result<Vec<_>>>()?;
        let report = MetricReport::evaluate(recon.iter().zip(batches.iter().map(|b| &b.target)), 1.0)?;
        Ok((report, recon))
    }

    /// Same networks with the flow replaced by zero motion.
    pub fn without_coherence(&self) -> GanState {
        GanState {
            flow: FlowEstimator::Zero,
            opt_f: None,
            config: TrainConfig {
                flow_mode: FlowMode::None,
                ..self.config.clone()
            },
            ..self.clone()
        }
    }

    pub fn model_bundle(&self) -> Result<Bundle> {
        let mut b = Bundle::default();
        b.meta.insert("kind".into(), CHECKPOINT_KIND.into());
        b.meta.insert("epoch".into(), self.epoch.into());
        b.meta.insert("config".into(), serde_json::to_value(&self.config)?);
        self.generator.params.export("gen.", &mut b);
        self.discriminator.params.export("disc.", &mut b);
        if let Some(p) = self.flow.params() {
            p.export("flow.", &mut b);
        }
        Ok(b)
    }

    pub fn optimizer_bundle(&self) -> Bundle {
        let mut b = Bundle::default();
        b.meta.insert("kind".into(), "ganlc-optimizer".into());
        b.meta.insert("epoch".into(), self.epoch.into());
        self.opt_g.export("gen.", self.generator.params.names(), &mut b);
        self.opt_d.export("disc.", self.discriminator.params.names(), &mut b);
        if let (Some(o), Some(p)) = (&self.opt_f, self.flow.params()) {
            o.export("flow.", p.names(), &mut b);
        }
        b
    }

    /// Writes `path` with the parameters and its sibling optimizer file.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.model_bundle()?.save(path)?;
        self.optimizer_bundle().save(optimizer_path(path))
    }

    /// Restores networks from a model bundle and, if given, optimizer state.
    pub fn from_bundles(model: &Bundle, optimizer: Option<&Bundle>) -> Result<Self> {
        if model.meta.get("kind").and_then(|v| v.as_str()) != Some(CHECKPOINT_KIND) {
            return Err(Error::Format("not a training checkpoint".into()));
        }
        let config: TrainConfig = serde_json::from_value(model.meta.get("config").cloned().unwrap_or_default())
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let epoch = model
            .meta
            .get("epoch")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format("checkpoint lacks epoch".into()))? as usize;
        let mut state = GanState::new(config)?;
        state.generator.params.import("gen.", model)?;
        state.discriminator.params.import("disc.", model)?;
        if let FlowEstimator::Learned(net) = &mut state.flow {
            net.params.import("flow.", model)?;
        }
        if let Some(o) = optimizer {
            state.opt_g.import("gen.", state.generator.params.names(), o)?;
            state.opt_d.import("disc.", state.discriminator.params.names(), o)?;
            if let (Some(opt), Some(p)) = (&mut state.opt_f, state.flow.params()) {
                opt.import("flow.", p.names(), o)?;
            }
        }
        state.epoch = epoch;
        Ok(state)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>, with_optimizer: bool) -> Result<Self> {
        let path = path.as_ref();
        let model = Bundle::load(path)?;
        let opt = if with_optimizer { Some(Bundle::load(optimizer_path(path))?) } else { None };
        GanState::from_bundles(&model, opt.as_ref())
    }
}

/// `run.ctlc` keeps its optimizer state in `run.optim.ctlc`.
pub fn optimizer_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.optim.ctlc"))
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(train: &[SliceBatch], val: &[SliceBatch], cfg: &TrainConfig) -> Result<(GanState, Vec<EpochLog>)> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut state = GanState::new(cfg.clone())?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        log.push(state.train_epoch(train, val)?);
    }
    Ok((state, log))
}
