use std::f64::consts::LN_2;

use ganlc::flow::FlowField;
use ganlc::gan::{
    discriminator_objective, generate_neighbors, infer_volume, loss_discriminator, loss_generator, loss_perceptual,
    reconstruct, reconstruct_nodes, train, write_log, FlowEstimator, FlowMode, GanState, LossWeights, NeighborSet,
    ObjectiveScale, PerceptualReduction, SliceBatch, TrainConfig,
};
use ganlc::nn::{
    to_image, Conv, DiscriminatorConfig, DiscriminatorNet, FeatureTaps, FlowNetConfig, GeneratorConfig, GeneratorNet,
    Graph, Init, LayerSpec, ParamStore, Var,
};
use ganlc::tomo::Image;

fn tiny_generator(seed: u64) -> GeneratorNet {
    GeneratorNet::new(
        GeneratorConfig {
            in_channels: 3,
            base_width: 4,
            depth: 3,
        },
        seed,
    )
    .unwrap()
}

fn tiny_discriminator(seed: u64) -> DiscriminatorNet {
    DiscriminatorNet::new(DiscriminatorConfig { base_width: 2 }, seed).unwrap()
}

fn blob(size: usize, dr: f64, dc: f64) -> Image {
    let c = size as f64 / 2.0;
    Image::from_fn(size, size, |r, col| {
        let (y, x) = (r as f64 - c - dr, col as f64 - c - dc);
        0.8 * (-(x * x + y * y) / 40.0).exp() + 0.2 * (-((x - 4.0).powi(2) + (y + 3.0).powi(2)) / 8.0).exp()
    })
}

fn mse(a: &Image, b: &Image) -> f64 {
    a.mse(b).unwrap()
}

fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn identity_generator_returns_neighbors() {
    let mut g = tiny_generator(4);
    g.make_identity();
    let ns = NeighborSet::new(vec![blob(16, 0.0, 0.0), blob(16, 1.0, 0.5)]).unwrap();
    let out = generate_neighbors(&g, &ns).unwrap();
    assert_eq!(out.len(), 2);
    for (a, b) in out.slices().iter().zip(ns.slices()) {
        assert!(max_abs_diff(a, b) < 1e-6);
    }
    let one = NeighborSet::new(vec![blob(16, 0.0, 0.0)]).unwrap();
    assert_eq!(generate_neighbors(&g, &one).unwrap().len(), 1);
}

#[test]
fn generate_neighbors_is_deterministic_and_checks_size() {
    let g = tiny_generator(9);
    let ns = NeighborSet::new(vec![blob(16, 0.0, 0.0)]).unwrap();
    assert_eq!(generate_neighbors(&g, &ns).unwrap(), generate_neighbors(&g, &ns).unwrap());
    let odd = NeighborSet::new(vec![Image::zeros(10, 10)]).unwrap();
    assert!(generate_neighbors(&g, &odd).is_err());
}

#[test]
fn true_flow_warping_aligns_neighbours() {
    let mut gen = tiny_generator(1);
    gen.make_identity();
    let (du, dv) = (1.5, -1.0);
    let target = blob(32, 0.0, 0.0);
    // neighbour(q) = target(q - d), so warping it by d recovers the target
    let neighbor = blob(32, dv, du);
    let s = target.clone();
    let ns = NeighborSet::new(vec![neighbor.clone()]).unwrap();
    let run = |flow: FlowField| {
        let mut g = Graph::new();
        let p = gen.params.bind(&mut g, false).unwrap();
        let nodes = reconstruct_nodes(&gen, &mut g, &p, &s, &ns, &[flow], true).unwrap();
        (to_image(&g, nodes.warped[0]).unwrap(), to_image(&g, nodes.output).unwrap())
    };
    let (warped_true, out_true) = run(FlowField::constant(32, 32, du, dv));
    let (warped_zero, out_zero) = run(FlowField::zeros(32, 32));
    assert!(mse(&out_true, &target) <= mse(&out_zero, &target));
    assert!(mse(&warped_true, &target) < 0.1 * mse(&warped_zero, &target));
    // the classic estimator on the same pair also moves the evidence closer
    let classic = FlowEstimator::Classic { alpha: 0.1, iters: 100 };
    let est = classic.estimate(&neighbor, &s).unwrap();
    let (warped_est, _) = run(est);
    assert!(mse(&warped_est, &target) < 0.5 * mse(&warped_zero, &target));
}

#[test]
fn reconstruct_preserves_shape() {
    let gen = tiny_generator(2);
    let stack: Vec<Image> = (0..3).map(|k| blob(16, k as f64 * 0.3, 0.0)).collect();
    let out = reconstruct(&gen, &FlowEstimator::Zero, &stack[1], &NeighborSet::of(&stack, 1).unwrap()).unwrap();
    assert_eq!(out.shape(), (16, 16));
    let vol = infer_volume(&gen, &FlowEstimator::Zero, &stack).unwrap();
    assert_eq!(vol.len(), 3);
    assert!(infer_volume(&gen, &FlowEstimator::Zero, &[]).is_err());
}

#[test]
fn infer_volume_follows_boundary_rule() {
    let gen = tiny_generator(5);
    let f = FlowEstimator::Classic { alpha: 0.1, iters: 30 };
    let stack: Vec<Image> = (0..3).map(|k| blob(16, k as f64 * 0.5, -(k as f64) * 0.25)).collect();
    let vol = infer_volume(&gen, &f, &stack).unwrap();
    let middle = reconstruct(&gen, &f, &stack[1], &NeighborSet::new(vec![stack[0].clone(), stack[2].clone()]).unwrap()).unwrap();
    let first = reconstruct(&gen, &f, &stack[0], &NeighborSet::new(vec![stack[1].clone()]).unwrap()).unwrap();
    let last = reconstruct(&gen, &f, &stack[2], &NeighborSet::new(vec![stack[1].clone()]).unwrap()).unwrap();
    assert!(max_abs_diff(&vol[1], &middle) < 1e-12);
    assert!(max_abs_diff(&vol[0], &first) < 1e-12);
    assert!(max_abs_diff(&vol[2], &last) < 1e-12);
    let single = infer_volume(&gen, &f, &stack[..1]).unwrap();
    let own = reconstruct(&gen, &f, &stack[0], &NeighborSet::new(vec![stack[0].clone()]).unwrap()).unwrap();
    assert!(max_abs_diff(&single[0], &own) < 1e-12);
}

fn half_discriminator() -> DiscriminatorNet {
    let mut d = tiny_discriminator(3);
    let names: Vec<String> = d.params.names().to_vec();
    for (name, t) in names.iter().zip(d.params.tensors_mut()) {
        if name.starts_with("head.") {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    d
}

#[test]
fn discriminator_loss_at_one_half() {
    let d = half_discriminator();
    for n in [1usize, 4] {
        let real: Vec<Image> = (0..n).map(|k| blob(16, k as f64, 0.0)).collect();
        let fake: Vec<Image> = (0..n).map(|k| blob(16, 0.0, k as f64)).collect();
        let l = loss_discriminator(&d, &real, &fake).unwrap();
        assert!((l - 2.0 * n as f64 * LN_2).abs() < 1e-9, "n={n}: {l}");
    }
    let mut g = Graph::new();
    let half = g.constant(vec![1, 1], vec![0.5]).unwrap();
    let l = discriminator_objective(&mut g, &[half], &[half]).unwrap();
    assert!((g.scalar(l) - 2.0 * LN_2).abs() < 1e-12);
}

#[test]
fn discriminator_loss_is_additive() {
    let d = tiny_discriminator(8);
    let real: Vec<Image> = (0..3).map(|k| blob(16, k as f64, 0.0)).collect();
    let fake: Vec<Image> = (0..3).map(|k| blob(16, 0.0, -(k as f64))).collect();
    let whole = loss_discriminator(&d, &real, &fake).unwrap();
    let parts: f64 = (0..3).map(|i| loss_discriminator(&d, &real[i..=i], &fake[i..=i]).unwrap()).sum();
    assert!((whole - parts).abs() < 1e-12);
    assert!(loss_discriminator(&d, &[], &[]).is_err());
}

#[test]
fn generator_loss_identities() {
    let d = tiny_discriminator(6);
    let x: Vec<Image> = (0..2).map(|k| blob(16, k as f64, 1.0)).collect();
    let w = LossWeights::default();
    for perceptual in [PerceptualReduction::Sum, PerceptualReduction::TapMean] {
        let scale = ObjectiveScale { perceptual, intensity: 1.0 };
        let l = loss_generator(&d, &x, &x, &w, scale).unwrap();
        assert_eq!(l.pixel, 0.0);
        assert_eq!(l.percept, 0.0);
        assert!(l.adv > 0.0);
        assert!((l.total - w.lambda_adv * l.adv).abs() < 1e-15);
    }
    assert_eq!(loss_perceptual(&d, &x, &x).unwrap(), 0.0);

    let y: Vec<Image> = (0..2).map(|k| blob(16, 0.0, k as f64)).collect();
    let l = loss_generator(&d, &x, &y, &w, ObjectiveScale::default()).unwrap();
    assert!(l.pixel > 0.0 && l.adv > 0.0 && l.percept > 0.0);
    let expected = l.pixel + 0.01 * l.adv + l.percept;
    assert!((l.total - expected).abs() < 1e-9 * expected);
    let direct: f64 = x.iter().zip(&y).map(|(a, b)| mse(a, b)).sum::<f64>() / 2.0;
    assert!((l.pixel - direct).abs() < 1e-15);
    let scaled = loss_generator(&d, &x, &y, &w, ObjectiveScale { intensity: 255.0, ..Default::default() }).unwrap();
    assert!((scaled.pixel - 65025.0 * direct).abs() < 1e-9 * scaled.pixel);
    assert!(loss_generator(&d, &x, &y[..1], &w, ObjectiveScale::default()).is_err());
}

#[test]
fn perceptual_loss_is_symmetric() {
    let d = tiny_discriminator(7);
    let a = vec![blob(16, 0.0, 0.0)];
    let b = vec![blob(16, 1.0, -1.0)];
    let ab = loss_perceptual(&d, &a, &b).unwrap();
    let ba = loss_perceptual(&d, &b, &a).unwrap();
    assert!(ab > 0.0);
    assert!((ab - ba).abs() < 1e-12 * ab);
}

/// A single 1x1 identity convolution whose output is the only tap.
struct PassThrough {
    params: ParamStore,
    conv: Conv,
}

impl PassThrough {
    fn new() -> Self {
        let mut params = ParamStore::new();
        let conv = Conv::new(LayerSpec::conv(1, 1, 1, 1), false, "id", &mut params, &mut Init::new(0)).unwrap();
        params.get_mut(conv.weight).data[0] = 1.0;
        PassThrough { params, conv }
    }
}

impl FeatureTaps for PassThrough {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn taps(&self, g: &mut Graph, p: &[Var], x: Var) -> ganlc::Result<Vec<Var>> {
        Ok(vec![self.conv.forward(g, p, x)?])
    }
}

#[test]
fn perceptual_loss_with_pass_through_taps_is_l1() {
    let d = PassThrough::new();
    let real: Vec<Image> = (0..3).map(|k| blob(8, k as f64, 0.0)).collect();
    let fake: Vec<Image> = (0..3).map(|k| blob(8, 0.0, 0.5 * k as f64)).collect();
    let oracle: f64 = real
        .iter()
        .zip(&fake)
        .map(|(r, f)| r.data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum();
    let l = loss_perceptual(&d, &real, &fake).unwrap();
    assert!((l - oracle).abs() < 1e-12 * oracle, "{l} vs {oracle}");
}

fn toy_batches(n: usize, size: usize) -> Vec<SliceBatch> {
    let targets: Vec<Image> = (0..n).map(|k| blob(size, 0.4 * k as f64, -0.3 * k as f64)).collect();
    let noisy: Vec<Image> = targets
        .iter()
        .enumerate()
        .map(|(k, t)| Image::from_fn(size, size, |r, c| t.get(r, c) + 0.05 * ((r * 7 + c * 13 + k * 5) as f64).sin()))
        .collect();
    SliceBatch::from_stack(&noisy, &targets, 0).unwrap()
}

fn toy_config(mode: FlowMode) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 2,
        seed: 17,
        flow_mode: mode,
        flow_iters: 20,
        generator: GeneratorConfig {
            in_channels: 3,
            base_width: 4,
            depth: 3,
        },
        discriminator: DiscriminatorConfig { base_width: 2 },
        flownet: FlowNetConfig { base_width: 2 },
        ..TrainConfig::default()
    }
}

#[test]
fn one_epoch_smoke_run() {
    let data = toy_batches(4, 16);
    for mode in [FlowMode::Classic, FlowMode::Learned, FlowMode::None] {
        let (state, log) = train(&data[..3], &data[3..], &toy_config(mode)).unwrap();
        assert_eq!(log.len(), 1);
        assert!(log[0].is_finite(), "{mode:?} {:?}", log[0]);
        assert!(log[0].val_psnr.is_finite());
        assert_eq!(state.epoch, 1);
    }
    assert!(train(&[], &data, &toy_config(FlowMode::Classic)).is_err());
}

fn snapshot(p: &ParamStore) -> Vec<Vec<f64>> {
    p.snapshot()
}

#[test]
fn updates_are_isolated_between_networks() {
    let data = toy_batches(3, 16);
    let batch: Vec<&SliceBatch> = data.iter().collect();
    let mut st = GanState::new(toy_config(FlowMode::Classic)).unwrap();
    let flows = st.batch_flows(&batch).unwrap();
    let pass = st.generator_pass(&batch, &flows).unwrap();
    let fake = pass.generated().unwrap();
    let real: Vec<Image> = data.iter().map(|b| b.target.clone()).collect();

    let g0 = snapshot(&st.generator.params);
    let d0 = snapshot(&st.discriminator.params);
    st.update_discriminator(&real, &fake).unwrap();
    assert_eq!(snapshot(&st.generator.params), g0);
    assert!(st.generator.params.tensors().iter().all(|t| t.grad.is_none()));
    let d1 = snapshot(&st.discriminator.params);
    assert_ne!(d1, d0);

    st.update_generator(pass).unwrap();
    assert_eq!(snapshot(&st.discriminator.params), d1);
    assert!(st.discriminator.params.tensors().iter().all(|t| t.grad.is_none()));
    assert_ne!(snapshot(&st.generator.params), g0);
}

#[test]
fn training_is_deterministic() {
    let data = toy_batches(5, 16);
    let cfg = TrainConfig {
        epochs: 2,
        ..toy_config(FlowMode::Learned)
    };
    let run = || {
        let (state, log) = train(&data[..4], &data[4..], &cfg).unwrap();
        let mut csv = Vec::new();
        write_log(&mut csv, &cfg, &log).unwrap();
        let mut bytes = Vec::new();
        state.model_bundle().unwrap().write(&mut bytes).unwrap();
        (csv, bytes)
    };
    let (a, ab) = run();
    let (b, bb) = run();
    assert_eq!(a, b);
    assert_eq!(ab, bb);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# flow_mode=learned"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let data = toy_batches(4, 16);
    let cfg = TrainConfig {
        epochs: 2,
        ..toy_config(FlowMode::Learned)
    };
    let (full, full_log) = train(&data[..3], &data[3..], &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.ctlc");
    let mut st = GanState::new(cfg.clone()).unwrap();
    let first = st.train_epoch(&data[..3], &data[3..]).unwrap();
    st.save_checkpoint(&path).unwrap();
    let mut resumed = GanState::load_checkpoint(&path, true).unwrap();
    assert_eq!(resumed, st);
    let second = resumed.train_epoch(&data[..3], &data[3..]).unwrap();
    assert_eq!(second.epoch, 2);
    assert_eq!(vec![first, second], full_log);
    assert_eq!(resumed, full);

    let model_only = GanState::load_checkpoint(&path, false).unwrap();
    assert_eq!(model_only.generator, st.generator);
}

#[test]
fn checkpoint_shape_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.ctlc");
    let st = GanState::new(toy_config(FlowMode::Classic)).unwrap();
    let mut b = st.model_bundle().unwrap();
    let entry = b.tensors.iter_mut().find(|(n, _, _)| n.starts_with("gen.")).unwrap();
    entry.1 = vec![entry.2.len()];
    b.save(&path).unwrap();
    assert!(GanState::load_checkpoint(&path, false).is_err());
}

#[test]
fn zero_flow_state_keeps_generator() {
    let st = GanState::new(toy_config(FlowMode::Classic)).unwrap();
    let nolc = st.without_coherence();
    assert_eq!(nolc.flow, FlowEstimator::Zero);
    assert_eq!(nolc.generator, st.generator);
    assert_eq!(nolc.config.flow_mode, FlowMode::None);
}
