//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into every node that
//! depends on a `requires_grad` leaf.

use super::kernels::{col2im, gemm, im2col, Window};
use super::Tensor;
use crate::error::{Error, Result};
use crate::flow::bilinear_taps;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, win: Window },
    ConvT { x: Var, w: Var, b: Option<Var>, win: Window },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid { x: Var },
    InstanceNorm { x: Var, inv_std: Vec<f64> },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    Sum { x: Var },
    Mean { x: Var },
    Abs { x: Var },
    Square { x: Var },
    LogClamp { x: Var, eps: f64 },
    Log1mClamp { x: Var, eps: f64 },
    GlobalAvgPool { x: Var },
    Linear { x: Var, w: Var, b: Var },
    Warp { src: Var, flow: Var },
    Channel { x: Var, c: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool, what: &str) -> Result<Var> {
        check_finite(&data, what)?;
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            value: Tensor {
                shape,
                data,
                grad: None,
                requires_grad,
            },
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf node; gradients flow into it when `t.requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        let rg = t.requires_grad;
        self.push(t.shape, t.data, Op::Leaf, rg, "leaf")
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Graph::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = &self.nodes[v.0].value;
        let (shape, data) = (t.shape.clone(), t.data.clone());
        self.push(shape, data, Op::Leaf, false, "detach")
    }

    fn nchw(&self, v: Var, ctx: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape(v) {
            &[n, c, h, w] => Ok((n, c, h, w)),
            s => Err(Error::dims(ctx, "rank-4 tensor", s.to_vec())),
        }
    }

    fn same_shape(&self, a: Var, b: Var, ctx: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dims(ctx, self.shape(a).to_vec(), self.shape(b).to_vec()));
        }
        Ok(())
    }

    fn check_bias(&self, b: Option<Var>, cout: usize, ctx: &'static str) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::dims(ctx, vec![cout], self.shape(b).to_vec()));
            }
        }
        Ok(())
    }

    /// Cross-correlation. `w` is `[out, in, k, k]`, `b` is `[out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.nchw(x, "conv2d input")?;
        let (cout, wcin, k, k2) = self.nchw(w, "conv2d weight")?;
        if wcin != cin || k != k2 {
            return Err(Error::dims("conv2d channels", vec![cout, cin, k, k], self.shape(w).to_vec()));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be >= 1"));
        }
        self.check_bias(b, cout, "conv2d bias")?;
        let win = Window::new(cin, h, wd, k, stride, pad)
            .ok_or_else(|| Error::invalid(format!("conv2d kernel {k} larger than padded {h}x{wd}")))?;
        let (rows, cols) = (win.col_rows(), win.col_cols());
        let mut out = vec![0.0; n * cout * cols];
        let mut col = vec![0.0; rows * cols];
        let (xd, wdata) = (self.data(x), self.data(w));
        for i in 0..n {
            im2col(&xd[i * cin * h * wd..(i + 1) * cin * h * wd], &win, &mut col);
            let o = &mut out[i * cout * cols..(i + 1) * cout * cols];
            gemm(cout, rows, cols, wdata, false, &col, false, 0.0, o);
            if let Some(b) = b {
                for (co, &bv) in self.data(b).iter().enumerate() {
                    o[co * cols..(co + 1) * cols].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let rg = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        self.push(vec![n, cout, win.out_h, win.out_w], out, Op::Conv { x, w, b, win }, rg, "conv2d")
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`] in `x`).
    /// `w` is `[in, out, k, k]`; output extent is `(in - 1) * stride - 2 pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.nchw(x, "conv_transpose2d input")?;
        let (wcin, cout, k, k2) = self.nchw(w, "conv_transpose2d weight")?;
        if wcin != cin || k != k2 {
            return Err(Error::dims("conv_transpose2d channels", vec![cin, cout, k, k], self.shape(w).to_vec()));
        }
        if stride == 0 {
            return Err(Error::invalid("conv_transpose2d stride must be >= 1"));
        }
        self.check_bias(b, cout, "conv_transpose2d bias")?;
        let extent = |e: usize| {
            ((e - 1) * stride + k)
                .checked_sub(2 * pad)
                .filter(|&o| o > 0)
                .ok_or_else(|| Error::invalid("conv_transpose2d padding too large"))
        };
        let (oh, ow) = (extent(h)?, extent(wd)?);
        let win = Window::new(cout, oh, ow, k, stride, pad)
            .filter(|win| win.out_h == h && win.out_w == wd)
            .ok_or_else(|| Error::invalid("conv_transpose2d geometry is not invertible"))?;
        let rows = win.col_rows();
        let hw = h * wd;
        let mut out = vec![0.0; n * cout * oh * ow];
        let mut col = vec![0.0; rows * hw];
        let (xd, wdata) = (self.data(x), self.data(w));
        for i in 0..n {
            gemm(rows, cin, hw, wdata, true, &xd[i * cin * hw..(i + 1) * cin * hw], false, 0.0, &mut col);
            let o = &mut out[i * cout * oh * ow..(i + 1) * cout * oh * ow];
            col2im(&col, &win, o);
            if let Some(b) = b {
                for (co, &bv) in self.data(b).iter().enumerate() {
                    o[co * oh * ow..(co + 1) * oh * ow].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let rg = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        self.push(vec![n, cout, oh, ow], out, Op::ConvT { x, w, b, win }, rg, "conv_transpose2d")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(shape, out, Op::LeakyRelu { x, slope }, rg, "leaky_relu")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(shape, out, Op::Sigmoid { x }, rg, "sigmoid")
    }

    /// Per-sample, per-channel normalisation to zero mean and unit variance.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (n, c, h, w) = self.nchw(x, "instance_norm")?;
        let p = h * w;
        let mut out = self.data(x).to_vec();
        let mut inv_std = Vec::with_capacity(n * c);
        for plane in out.chunks_exact_mut(p) {
            let mu = plane.iter().sum::<f64>() / p as f64;
            let var = plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / p as f64;
            let inv = 1.0 / (var + eps).sqrt();
            plane.iter_mut().for_each(|v| *v = (*v - mu) * inv);
            inv_std.push(inv);
        }
        let rg = self.needs(&[x]);
        self.push(vec![n, c, h, w], out, Op::InstanceNorm { x, inv_std }, rg, "instance_norm")
    }

    /// Concatenation along channels.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.nchw(a, "concat")?;
        let (nb, cb, hb, wb) = self.nchw(b, "concat")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::dims("concat", (n, h, w), (nb, hb, wb)));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for i in 0..n {
            out.extend_from_slice(&self.data(a)[i * sa..(i + 1) * sa]);
            out.extend_from_slice(&self.data(b)[i * sb..(i + 1) * sb]);
        }
        let rg = self.needs(&[a, b]);
        self.push(vec![n, ca + cb, h, w], out, Op::Concat { a, b }, rg, "concat")
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &'static str) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        self.push(shape, out, op, rg, what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul { a, b }, "mul")
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, what: &'static str) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(shape, out, op, rg, what)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(x, |v| s * v, Op::Scale { x, s }, "scale")
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::abs, Op::Abs { x }, "abs")
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v * v, Op::Square { x }, "square")
    }

    /// `ln(clamp(x, eps, 1 - eps))`.
    pub fn log_clamp(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.unary(x, |v| v.clamp(eps, 1.0 - eps).ln(), Op::LogClamp { x, eps }, "log")
    }

    /// `ln(1 - clamp(x, eps, 1 - eps))`.
    pub fn log1m_clamp(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.unary(x, |v| (1.0 - v.clamp(eps, 1.0 - eps)).ln(), Op::Log1mClamp { x, eps }, "log1m")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        let rg = self.needs(&[x]);
        self.push(vec![1], vec![s], Op::Sum { x }, rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.needs(&[x]);
        self.push(vec![1], vec![s], Op::Mean { x }, rg, "mean")
    }

    /// `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(x, "global_avg_pool")?;
        let p = (h * w) as f64;
        let out = self.data(x).chunks_exact(h * w).map(|pl| pl.iter().sum::<f64>() / p).collect();
        let rg = self.needs(&[x]);
        self.push(vec![n, c], out, Op::GlobalAvgPool { x }, rg, "global_avg_pool")
    }

    /// `x: [n, in]`, `w: [out, in]`, `b: [out]` -> `[n, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, cin) = match self.shape(x) {
            &[n, c] => (n, c),
            s => return Err(Error::dims("linear input", "rank 2", s.to_vec())),
        };
        let cout = match self.shape(w) {
            &[o, i] if i == cin => o,
            s => return Err(Error::dims("linear weight", vec![0, cin], s.to_vec())),
        };
        self.check_bias(Some(b), cout, "linear bias")?;
        let mut out = vec![0.0; n * cout];
        gemm(n, cin, cout, self.data(x), false, self.data(w), true, 0.0, &mut out);
        let bd = self.data(b);
        for row in out.chunks_exact_mut(cout) {
            row.iter_mut().zip(bd).for_each(|(v, b)| *v += b);
        }
        let rg = self.needs(&[x, w, b]);
        self.push(vec![n, cout], out, Op::Linear { x, w, b }, rg, "linear")
    }

    /// Backward bilinear warp of every channel of `src` by `flow`
    /// (`[n, 2, h, w]`, channel 0 along columns, 1 along rows).
    pub fn warp(&mut self, src: Var, flow: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(src, "warp source")?;
        let (nf, cf, hf, wf) = self.nchw(flow, "warp flow")?;
        if (nf, cf, hf, wf) != (n, 2, h, w) {
            return Err(Error::dims("warp flow", vec![n, 2, h, w], vec![nf, cf, hf, wf]));
        }
        let p = h * w;
        let (sd, fd) = (self.data(src), self.data(flow));
        let mut out = vec![0.0; n * c * p];
        for i in 0..n {
            let (u, v) = (&fd[(2 * i) * p..(2 * i + 1) * p], &fd[(2 * i + 1) * p..(2 * i + 2) * p]);
            for r in 0..h {
                for col in 0..w {
                    let q = r * w + col;
                    let taps = bilinear_taps(h, w, r as f64 + v[q], col as f64 + u[q]);
                    for ch in 0..c {
                        let plane = &sd[(i * c + ch) * p..(i * c + ch + 1) * p];
                        out[(i * c + ch) * p + q] = (0..4).map(|k| taps.weight[k] * plane[taps.idx[k]]).sum();
                    }
                }
            }
        }
        let rg = self.needs(&[src, flow]);
        self.push(vec![n, c, h, w], out, Op::Warp { src, flow }, rg, "warp")
    }

    /// Channel `c` of a rank-4 tensor, keeping the channel axis.
    pub fn channel(&mut self, x: Var, c: usize) -> Result<Var> {
        let (n, ch, h, w) = self.nchw(x, "channel")?;
        if c >= ch {
            return Err(Error::invalid(format!("channel {c} out of range for {ch}")));
        }
        let p = h * w;
        let d = self.data(x);
        let out = (0..n).flat_map(|i| d[(i * ch + c) * p..(i * ch + c + 1) * p].iter().copied()).collect();
        let rg = self.needs(&[x]);
        self.push(vec![n, 1, h, w], out, Op::Channel { x, c }, rg, "channel")
    }

    /// Hash of which side of every breakpoint (activation kinks, `abs` at
    /// zero, log clamps) each element lies on. Two evaluations with equal
    /// signatures sit on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            let (x, lo, hi) = match &node.op {
                Op::LeakyRelu { x, .. } | Op::Abs { x } => (*x, 0.0, f64::INFINITY),
                Op::LogClamp { x, eps } | Op::Log1mClamp { x, eps } => (*x, *eps, 1.0 - eps),
                _ => continue,
            };
            for chunk in self.nodes[x.0].value.data.chunks(64) {
                let bits = chunk
                    .iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, &v)| acc | (((v > lo && v < hi) as u64) << i));
                bits.hash(&mut h);
            }
        }
        h.finish()
    }

    /// Reverse pass from a scalar `loss`. Replaces gradients of any earlier pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.data.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            check_finite(&g, "gradient")?;
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Split borrows: values are read from `nodes`, gradients written to `grads`.
        let nodes = std::mem::take(&mut self.nodes);
        let node = &nodes[i];
        let val = |v: Var| nodes[v.0].value.data.as_slice();
        {
            let mut grads = Grads { nodes: &nodes, grads: &mut self.grads };
            match &node.op {
                Op::Leaf => {}
                Op::Conv { x, w, b, win } => {
                    let (n, cout) = (node.value.shape[0], node.value.shape[1]);
                    let (rows, cols) = (win.col_rows(), win.col_cols());
                    let in_len = win.channels * win.height * win.width;
                    let mut col = vec![0.0; rows * cols];
                    let needs_x = nodes[x.0].requires_grad;
                    for s in 0..n {
                        let gy = &g[s * cout * cols..(s + 1) * cout * cols];
                        if let Some(gw) = grads.get(*w) {
                            im2col(&val(*x)[s * in_len..(s + 1) * in_len], win, &mut col);
                            gemm(cout, cols, rows, gy, false, &col, true, 1.0, gw);
                        }
                        if let Some(b) = b {
                            if let Some(gb) = grads.get(*b) {
                                for (co, gbv) in gb.iter_mut().enumerate() {
                                    *gbv += gy[co * cols..(co + 1) * cols].iter().sum::<f64>();
                                }
                            }
                        }
                        if needs_x {
                            gemm(rows, cout, cols, val(*w), true, gy, false, 0.0, &mut col);
                            let gx = grads.get(*x).unwrap();
                            col2im(&col, win, &mut gx[s * in_len..(s + 1) * in_len]);
                        }
                    }
                }
                Op::ConvT { x, w, b, win } => {
                    let (n, cin, h, wd) = {
                        let s = &nodes[x.0].value.shape;
                        (s[0], s[1], s[2], s[3])
                    };
                    let hw = h * wd;
                    let rows = win.col_rows();
                    let out_len = win.channels * win.height * win.width;
                    let mut col = vec![0.0; rows * hw];
                    for s in 0..n {
                        let gy = &g[s * out_len..(s + 1) * out_len];
                        im2col(gy, win, &mut col);
                        if let Some(gx) = grads.get(*x) {
                            gemm(cin, rows, hw, val(*w), false, &col, false, 1.0, &mut gx[s * cin * hw..(s + 1) * cin * hw]);
                        }
                        if let Some(gw) = grads.get(*w) {
                            gemm(cin, hw, rows, &val(*x)[s * cin * hw..(s + 1) * cin * hw], false, &col, true, 1.0, gw);
                        }
                        if let Some(b) = b {
                            if let Some(gb) = grads.get(*b) {
                                let p = win.height * win.width;
                                for (co, gbv) in gb.iter_mut().enumerate() {
                                    *gbv += gy[co * p..(co + 1) * p].iter().sum::<f64>();
                                }
                            }
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = val(*x);
                    if let Some(gx) = grads.get(*x) {
                        for ((d, &gv), &xv) in gx.iter_mut().zip(g).zip(xv) {
                            *d += if xv > 0.0 { gv } else { slope * gv };
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let y = &node.value.data;
                    if let Some(gx) = grads.get(*x) {
                        for ((d, &gv), &y) in gx.iter_mut().zip(g).zip(y) {
                            *d += gv * y * (1.0 - y);
                        }
                    }
                }
                Op::InstanceNorm { x, inv_std } => {
                    let y = &node.value.data;
                    let p = node.value.shape[2] * node.value.shape[3];
                    if let Some(gx) = grads.get(*x) {
                        for (k, &inv) in inv_std.iter().enumerate() {
                            let r = k * p..(k + 1) * p;
                            let (gy, yy) = (&g[r.clone()], &y[r.clone()]);
                            let mg = gy.iter().sum::<f64>() / p as f64;
                            let mgy = gy.iter().zip(yy).map(|(a, b)| a * b).sum::<f64>() / p as f64;
                            for ((d, &gv), &yv) in gx[r].iter_mut().zip(gy).zip(yy) {
                                *d += inv * (gv - mg - yv * mgy);
                            }
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let s = &node.value.shape;
                    let (n, p) = (s[0], s[2] * s[3]);
                    let ca = nodes[a.0].value.shape[1];
                    let cb = s[1] - ca;
                    let (sa, sb) = (ca * p, cb * p);
                    if let Some(ga) = grads.get(*a) {
                        for i in 0..n {
                            add_into(&mut ga[i * sa..(i + 1) * sa], &g[i * (sa + sb)..i * (sa + sb) + sa]);
                        }
                    }
                    if let Some(gb) = grads.get(*b) {
                        for i in 0..n {
                            add_into(&mut gb[i * sb..(i + 1) * sb], &g[i * (sa + sb) + sa..(i + 1) * (sa + sb)]);
                        }
                    }
                }
                Op::Add { a, b } => {
                    if let Some(ga) = grads.get(*a) {
                        add_into(ga, g);
                    }
                    if let Some(gb) = grads.get(*b) {
                        add_into(gb, g);
                    }
                }
                Op::Sub { a, b } => {
                    if let Some(ga) = grads.get(*a) {
                        add_into(ga, g);
                    }
                    if let Some(gb) = grads.get(*b) {
                        gb.iter_mut().zip(g).for_each(|(d, v)| *d -= v);
                    }
                }
                Op::Mul { a, b } => {
                    if let Some(ga) = grads.get(*a) {
                        for ((d, gv), bv) in ga.iter_mut().zip(g).zip(val(*b)) {
                            *d += gv * bv;
                        }
                    }
                    if let Some(gb) = grads.get(*b) {
                        for ((d, gv), av) in gb.iter_mut().zip(g).zip(val(*a)) {
                            *d += gv * av;
                        }
                    }
                }
                Op::Scale { x, s } => {
                    if let Some(gx) = grads.get(*x) {
                        gx.iter_mut().zip(g).for_each(|(d, v)| *d += s * v);
                    }
                }
                Op::Sum { x } => {
                    if let Some(gx) = grads.get(*x) {
                        gx.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::Mean { x } => {
                    if let Some(gx) = grads.get(*x) {
                        let s = g[0] / gx.len() as f64;
                        gx.iter_mut().for_each(|d| *d += s);
                    }
                }
                Op::Abs { x } => {
                    if let Some(gx) = grads.get(*x) {
                        for ((d, gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                            if xv > 0.0 {
                                *d += gv;
                            } else if xv < 0.0 {
                                *d -= gv;
                            }
                        }
                    }
                }
                Op::Square { x } => {
                    if let Some(gx) = grads.get(*x) {
                        for ((d, gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                            *d += 2.0 * xv * gv;
                        }
                    }
                }
                Op::LogClamp { x, eps } => {
                    if let Some(gx) = grads.get(*x) {
                        for ((d, gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                            if xv > *eps && xv < 1.0 - eps {
                                *d += gv / xv;
                            }
                        }
                    }
                }
                Op::Log1mClamp { x, eps } => {
                    if let Some(gx) = grads.get(*x) {
                        for ((d, gv), &xv) in gx.iter_mut().zip(g).zip(val(*x)) {
                            if xv > *eps && xv < 1.0 - eps {
                                *d -= gv / (1.0 - xv);
                            }
                        }
                    }
                }
                Op::GlobalAvgPool { x } => {
                    let s = &nodes[x.0].value.shape;
                    let p = s[2] * s[3];
                    if let Some(gx) = grads.get(*x) {
                        for (plane, &gv) in gx.chunks_exact_mut(p).zip(g) {
                            let v = gv / p as f64;
                            plane.iter_mut().for_each(|d| *d += v);
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let (n, cin) = (nodes[x.0].value.shape[0], nodes[x.0].value.shape[1]);
                    let cout = node.value.shape[1];
                    if let Some(gx) = grads.get(*x) {
                        gemm(n, cout, cin, g, false, val(*w), false, 1.0, gx);
                    }
                    if let Some(gw) = grads.get(*w) {
                        gemm(cout, n, cin, g, true, val(*x), false, 1.0, gw);
                    }
                    if let Some(gb) = grads.get(*b) {
                        for row in g.chunks_exact(cout) {
                            add_into(gb, row);
                        }
                    }
                }
                Op::Warp { src, flow } => {
                    let s = &node.value.shape;
                    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                    let p = h * w;
                    let (sd, fd) = (val(*src), val(*flow));
                    let need_src = nodes[src.0].requires_grad;
                    let need_flow = nodes[flow.0].requires_grad;
                    let mut gsrc = if need_src { vec![0.0; n * c * p] } else { Vec::new() };
                    let mut gflow = if need_flow { vec![0.0; n * 2 * p] } else { Vec::new() };
                    for i in 0..n {
                        for r in 0..h {
                            for col in 0..w {
                                let q = r * w + col;
                                let (u, v) = (fd[2 * i * p + q], fd[(2 * i + 1) * p + q]);
                                let taps = bilinear_taps(h, w, r as f64 + v, col as f64 + u);
                                let (mut du, mut dv) = (0.0, 0.0);
                                for ch in 0..c {
                                    let base = (i * c + ch) * p;
                                    let gv = g[base + q];
                                    for k in 0..4 {
                                        if need_src {
                                            gsrc[base + taps.idx[k]] += taps.weight[k] * gv;
                                        }
                                        let sv = sd[base + taps.idx[k]];
                                        du += gv * taps.dcol[k] * sv;
                                        dv += gv * taps.drow[k] * sv;
                                    }
                                }
                                if need_flow {
                                    gflow[2 * i * p + q] += du;
                                    gflow[(2 * i + 1) * p + q] += dv;
                                }
                            }
                        }
                    }
                    if let Some(gs) = grads.get(*src) {
                        add_into(gs, &gsrc);
                    }
                    if let Some(gf) = grads.get(*flow) {
                        add_into(gf, &gflow);
                    }
                }
                Op::Channel { x, c } => {
                    let s = &nodes[x.0].value.shape;
                    let (n, ch, p) = (s[0], s[1], s[2] * s[3]);
                    if let Some(gx) = grads.get(*x) {
                        for i in 0..n {
                            add_into(&mut gx[(i * ch + c) * p..(i * ch + c + 1) * p], &g[i * p..(i + 1) * p]);
                        }
                    }
                }
            }
        }
        self.nodes = nodes;
    }
}

struct Grads<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl Grads<'_> {
    fn get(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.data.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], f: impl Fn(usize) -> f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input() {
        let mut g = Graph::new();
        let x = g.leaf(t4([1, 1, 4, 5], |i| i as f64 * 0.5)).unwrap();
        let w = g.constant(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = g.constant(vec![1], vec![0.0]).unwrap();
        let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(g.data(y), g.data(x));
    }

    #[test]
    fn averaging_kernel_preserves_constants() {
        let mut g = Graph::new();
        let x = g.leaf(t4([1, 1, 6, 6], |_| 0.7)).unwrap();
        let w = g.constant(vec![1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 6, 6]);
        for r in 1..5 {
            for c in 1..5 {
                assert!((g.data(y)[r * 6 + c] - 0.7).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_bad_arguments() {
        let mut g = Graph::new();
        let x = g.leaf(t4([1, 2, 4, 4], |_| 1.0)).unwrap();
        let w = g.constant(vec![1, 3, 3, 3], vec![0.0; 27]).unwrap();
        assert!(g.conv2d(x, w, None, 1, 1).is_err());
        let w = g.constant(vec![1, 2, 3, 3], vec![0.0; 18]).unwrap();
        assert!(g.conv2d(x, w, None, 0, 1).is_err());
    }

    #[test]
    fn output_extent_formula() {
        let mut g = Graph::new();
        let x = g.leaf(t4([1, 1, 9, 8], |_| 1.0)).unwrap();
        let w = g.constant(vec![2, 1, 3, 3], vec![0.1; 18]).unwrap();
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 5, 4]);
        let wt = g.constant(vec![2, 1, 4, 4], vec![0.1; 32]).unwrap();
        let z = g.conv_transpose2d(y, wt, None, 2, 1).unwrap();
        assert_eq!(g.shape(z), &[1, 1, 10, 8]);
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(t4([1, 1, 2, 3], |i| i as f64 - 2.5).with_grad()).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 1.0));
        let q = g.square(x).unwrap();
        let s = g.sum(q).unwrap();
        g.backward(s).unwrap();
        for (gv, xv) in g.grad(x).unwrap().iter().zip(g.data(x)) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn reuse_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0).with_grad()).unwrap();
        let y = g.add(x, x).unwrap();
        let z = g.mul(y, x).unwrap();
        g.backward(z).unwrap();
        // z = 2x^2
        assert_eq!(g.grad(x).unwrap(), &[12.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(t4([1, 1, 2, 2], |_| 1.0).with_grad()).unwrap();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn nan_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0)).unwrap();
        let y = g.log_clamp(x, 0.0).unwrap_err();
        assert!(matches!(y, Error::NonFinite(_)));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0).with_grad()).unwrap();
        let d = g.detach(x).unwrap();
        let y = g.mul(x, d).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
        assert!(g.grad(d).is_none());
    }

    #[test]
    fn clamped_log_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![0.0, 0.5, 1.0]).unwrap().with_grad()).unwrap();
        let l = g.log_clamp(x, 1e-7).unwrap();
        let s = g.sum(l).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 2.0, 0.0]);
    }
}
