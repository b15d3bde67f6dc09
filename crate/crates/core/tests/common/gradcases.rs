//! Finite-difference cases for every differentiable layer and network.

use ganlc::nn::*;
use ganlc::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn step() -> f64 { std::env::var("GC_STEP").ok().and_then(|s| s.parse().ok()).unwrap_or(1e-4) }
const TOL: f64 = 1e-4;
const ATOL: f64 = 1e-7;
const SAMPLES: usize = 20;

pub fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Contracts `out` with a fixed random tensor so every output element matters.
fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let r = random(g.shape(out), -1.0, 1.0, seed);
    let r = g.leaf(r)?;
    let m = g.mul(out, r)?;
    g.sum(m)
}

/// One finite-difference verification and the coordinate quota it had to meet.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub report: GradCheck,
    pub quota: usize,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.report.worst_rel_error < TOL && self.report.checked == self.quota
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let r = &self.report;
        write!(
            f,
            "{}: worst {:.3e} at {}[{}] ({}/{} checked, {} redrawn)",
            self.name, r.worst_rel_error, r.worst_param, r.worst_index, r.checked, self.quota, r.redrawn
        )
    }
}

fn check(name: &str, store: &mut ParamStore, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> Outcome {
    let report = check_gradients(store, SAMPLES, step(), ATOL, 11, |g, p| {
        let out = f(g, p)?;
        if g.shape(out) == [1] {
            Ok(out)
        } else {
            project(g, out, 99)
        }
    })
    .unwrap();
    let quota = store.tensors().iter().map(|t| t.len().min(SAMPLES)).sum();
    Outcome {
        name: name.to_string(),
        report,
        quota,
    }
}

fn store(tensors: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in tensors {
        s.add(n, t);
    }
    s
}

pub fn conv2d_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (stride, k) in [(1, 3), (2, 3), (1, 1), (2, 4)] {
        let mut s = store(vec![
            ("x", random(&[2, 3, 16, 16], -1.0, 1.0, 1)),
            ("w", random(&[4, 3, k, k], -0.5, 0.5, 2)),
            ("b", random(&[4], -0.5, 0.5, 3)),
        ]);
        out.push(check(&format!("conv2d s{stride} k{k}"), &mut s, |g, p| g.conv2d(p[0], p[1], Some(p[2]), stride, (k - 1) / 2)));
    }
    out
}

pub fn conv_transpose2d_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (stride, k, pad) in [(2, 4, 1), (1, 3, 1)] {
        let mut s = store(vec![
            ("x", random(&[1, 3, 8, 8], -1.0, 1.0, 4)),
            ("w", random(&[3, 2, k, k], -0.5, 0.5, 5)),
            ("b", random(&[2], -0.5, 0.5, 6)),
        ]);
        out.push(check(&format!("conv_t s{stride}"), &mut s, |g, p| g.conv_transpose2d(p[0], p[1], Some(p[2]), stride, pad)));
    }
    out
}

pub fn activation_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    // keep inputs away from the kink so central differences are exact
    let mut x = random(&[1, 2, 16, 16], 0.05, 1.0, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    x.data.iter_mut().for_each(|v| {
        if rng.gen_bool(0.5) {
            *v = -*v
        }
    });
    let mut s = store(vec![("x", x.clone())]);
    out.push(check("leaky_relu", &mut s, |g, p| g.leaky_relu(p[0], 0.2)));
    out.push(check("relu", &mut s, |g, p| g.relu(p[0])));
    out.push(check("sigmoid", &mut s, |g, p| g.sigmoid(p[0])));
    out.push(check("abs", &mut s, |g, p| g.abs(p[0])));
    out.push(check("square", &mut s, |g, p| g.square(p[0])));
    out.push(check("scale", &mut s, |g, p| g.scale(p[0], -1.7)));
    out.push(check("mean", &mut s, |g, p| g.mean(p[0])));
    out.push(check("sum", &mut s, |g, p| g.sum(p[0])));
    out
}

pub fn instance_norm_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut s = store(vec![("x", random(&[2, 3, 16, 16], -2.0, 1.0, 9))]);
    out.push(check("instance_norm", &mut s, |g, p| g.instance_norm(p[0], INSTANCE_NORM_EPS)));
    out
}

pub fn log_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut s = store(vec![("x", random(&[1, 1, 16, 16], 0.05, 0.95, 10))]);
    out.push(check("log_clamp", &mut s, |g, p| g.log_clamp(p[0], 1e-7)));
    out.push(check("log1m_clamp", &mut s, |g, p| g.log1m_clamp(p[0], 1e-7)));
    out
}

pub fn structural_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut s = store(vec![
        ("a", random(&[2, 2, 16, 16], -1.0, 1.0, 12)),
        ("b", random(&[2, 3, 16, 16], -1.0, 1.0, 13)),
    ]);
    out.push(check("concat", &mut s, |g, p| g.concat(p[0], p[1])));
    out.push(check("channel", &mut s, |g, p| g.channel(p[1], 2)));
    out.push(check("global_avg_pool", &mut s, |g, p| g.global_avg_pool(p[1])));
    let mut s = store(vec![
        ("a", random(&[1, 2, 16, 16], -1.0, 1.0, 14)),
        ("b", random(&[1, 2, 16, 16], -1.0, 1.0, 15)),
    ]);
    out.push(check("add", &mut s, |g, p| g.add(p[0], p[1])));
    out.push(check("sub", &mut s, |g, p| g.sub(p[0], p[1])));
    out.push(check("mul", &mut s, |g, p| g.mul(p[0], p[1])));
    out
}

pub fn linear_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut s = store(vec![
        ("x", random(&[3, 5], -1.0, 1.0, 16)),
        ("w", random(&[4, 5], -1.0, 1.0, 17)),
        ("b", random(&[4], -1.0, 1.0, 18)),
    ]);
    out.push(check("linear", &mut s, |g, p| g.linear(p[0], p[1], p[2])));
    out
}

pub fn warp_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    let img = ganlc::sim::gaussian_blob(16, 7.0, 8.5, 3.0, 1.0);
    let src = Tensor::new(vec![1, 1, 16, 16], img.data().to_vec()).unwrap();
    // non-integer flow keeps every sample strictly inside a bilinear cell
    let mut flow = random(&[1, 2, 16, 16], -1.4, 1.4, 19);
    flow.data.iter_mut().for_each(|v| {
        let f = v.fract().abs();
        if f < 0.05 || f > 0.95 {
            *v += 0.3;
        }
    });
    let mut s = store(vec![("src", src), ("flow", flow)]);
    out.push(check("warp", &mut s, |g, p| g.warp(p[0], p[1])));
    out
}

fn input(shape: &[usize], seed: u64) -> Tensor {
    random(shape, 0.0, 1.0, seed)
}

pub fn generator_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut net = GeneratorNet::new(GeneratorConfig::default(), 21).unwrap();
    let x = input(&[1, 3, 16, 16], 22);
    let target = input(&[1, 1, 16, 16], 23);
    let net2 = net.clone();
    out.push(check("generator", &mut net.params, |g, p| {
        let xi = g.leaf(x.clone())?;
        let t = g.leaf(target.clone())?;
        let y = net2.forward(g, p, xi)?;
        let d = g.sub(y, t)?;
        let sq = g.square(d)?;
        g.mean(sq)
    }));
    out
}

pub fn discriminator_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut net = DiscriminatorNet::new(DiscriminatorConfig::default(), 31).unwrap();
    let x = input(&[1, 1, 16, 16], 32);
    let net2 = net.clone();
    out.push(check("discriminator", &mut net.params, |g, p| {
        let xi = g.leaf(x.clone())?;
        let out = net2.forward(g, p, xi)?;
        let l = g.log_clamp(out.prob, 1e-7)?;
        let mut total = g.sum(l)?;
        for t in out.taps {
            let s = project(g, t, 5)?;
            total = g.add(total, s)?;
        }
        Ok(total)
    }));
    out
}

pub fn flownet_gradients() -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut net = FlowNetLite::new(FlowNetConfig::default(), 41).unwrap();
    let pair = input(&[1, 2, 16, 16], 42);
    let net2 = net.clone();
    out.push(check("flownet", &mut net.params, |g, p| {
        let xi = g.leaf(pair.clone())?;
        net2.forward(g, p, xi)
    }));
    out
}

pub fn layers() -> Vec<Outcome> {
    [
        conv2d_gradients,
        conv_transpose2d_gradients,
        activation_gradients,
        instance_norm_gradients,
        log_gradients,
        structural_gradients,
        linear_gradients,
        warp_gradients,
    ]
    .iter()
    .flat_map(|f| f())
    .collect()
}

pub fn networks() -> Vec<Outcome> {
    [generator_gradients, discriminator_gradients, flownet_gradients].iter().flat_map(|f| f()).collect()
}
