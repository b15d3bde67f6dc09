//! Brightness-constancy flow between adjacent slices, with the inter-slice
//! difference taking the place of the temporal derivative.

use super::FlowField;
use crate::error::{Error, Result};
use crate::tomo::Image;

/// Default smoothness weight of the Horn–Schunck solver.
pub const DEFAULT_ALPHA: f64 = 0.1;
/// Default number of Jacobi sweeps.
pub const DEFAULT_ITERS: usize = 1000;

/// Spatial and inter-slice derivatives of a slice pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTriple {
    pub height: usize,
    pub width: usize,
    /// Derivative along columns.
    pub gw: Vec<f64>,
    /// Derivative along rows.
    pub gh: Vec<f64>,
    /// `current - neighbour`.
    pub gz: Vec<f64>,
}

/// Central differences of the pair average (replicated borders) and the
/// inter-slice difference `b - a`. `a` is the neighbour, `b` the current slice.
pub fn gradients(a: &Image, b: &Image) -> Result<GradientTriple> {
    a.same_shape(b, "flow::gradients")?;
    let (h, w) = a.shape();
    let avg: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x + y)).collect();
    let at = |r: usize, c: usize| avg[r * w + c];
    let mut gw = vec![0.0; h * w];
    let mut gh = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
            gw[r * w + c] = 0.5 * (at(r, cr) - at(r, cl));
            gh[r * w + c] = 0.5 * (at(rd, c) - at(ru, c));
        }
    }
    let gz = b.data().iter().zip(a.data()).map(|(y, x)| y - x).collect();
    Ok(GradientTriple {
        height: h,
        width: w,
        gw,
        gh,
        gz,
    })
}

/// Mean-square brightness-constancy residual `gw*u + gh*v + gz` evaluated at
/// the velocity corresponding to the stored backward field.
pub fn constancy_residual(g: &GradientTriple, flow: &FlowField) -> f64 {
    let n = g.gz.len();
    (0..n)
        .map(|i| {
            // velocity = -backward displacement
            let r = -g.gw[i] * flow.u()[i] - g.gh[i] * flow.v()[i] + g.gz[i];
            r * r
        })
        .sum::<f64>()
        / n as f64
}

/// Regularised objective minimised by [`estimate_flow`]:
/// `sum (gw u + gh v + gz)^2 + alpha^2 sum_edges (|du|^2 + |dv|^2)`.
pub fn hs_objective(g: &GradientTriple, flow: &FlowField, alpha: f64) -> f64 {
    let (h, w) = (g.height, g.width);
    let (u, v) = (flow.u(), flow.v());
    let data = constancy_residual(g, flow) * (h * w) as f64;
    let mut smooth = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                smooth += (u[i + 1] - u[i]).powi(2) + (v[i + 1] - v[i]).powi(2);
            }
            if r + 1 < h {
                smooth += (u[i + w] - u[i]).powi(2) + (v[i + w] - v[i]).powi(2);
            }
        }
    }
    data + alpha * alpha * smooth
}

/// Horn–Schunck flow from neighbour `a` to current slice `b`.
///
/// Runs `iters` block-Jacobi sweeps from zero flow. Each sweep solves the
/// per-pixel 2x2 system exactly given the neighbours' previous values; the
/// iteration matrix keeps `2D - M` positive semidefinite, so the objective
/// never increases from one sweep to the next.
pub fn estimate_flow(a: &Image, b: &Image, alpha: f64, iters: usize) -> Result<FlowField> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("flow smoothness must be > 0, got {alpha}")));
    }
    if iters == 0 {
        return Err(Error::invalid("flow iteration count must be >= 1"));
    }
    let g = gradients(a, b)?;
    let (h, w) = (g.height, g.width);
    let a2 = alpha * alpha;
    // Solve for the velocity m (Eq. gw*mu + gh*mv + gz = 0) and negate at the end.
    let mut mu = vec![0.0; h * w];
    let mut mv = vec![0.0; h * w];
    let mut nu = vec![0.0; h * w];
    let mut nv = vec![0.0; h * w];
    for _ in 0..iters {
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let (mut su, mut sv, mut cnt) = (0.0, 0.0, 0.0);
                let mut add = |j: usize| {
                    su += mu[j];
                    sv += mv[j];
                    cnt += 1.0;
                };
                if c > 0 {
                    add(i - 1);
                }
                if c + 1 < w {
                    add(i + 1);
                }
                if r > 0 {
                    add(i - w);
                }
                if r + 1 < h {
                    add(i + w);
                }
                let (ubar, vbar) = if cnt > 0.0 { (su / cnt, sv / cnt) } else { (0.0, 0.0) };
                let (gw, gh, gz) = (g.gw[i], g.gh[i], g.gz[i]);
                let denom = a2 * cnt + gw * gw + gh * gh;
                let t = if denom > 0.0 { (gw * ubar + gh * vbar + gz) / denom } else { 0.0 };
                nu[i] = ubar - gw * t;
                nv[i] = vbar - gh * t;
            }
        }
        std::mem::swap(&mut mu, &mut nu);
        std::mem::swap(&mut mv, &mut nv);
    }
    let u = mu.into_iter().map(|x| -x).collect();
    let v = mv.into_iter().map(|x| -x).collect();
    FlowField::new(h, w, u, v)
}
