//! Central finite-difference verification of backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::Result;

pub const STEP_SHRINKS: usize = 2;

/// Worst discrepancy found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub worst_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates redrawn because `p - h` and `p + h` straddled a kink.
    pub redrawn: usize,
}

/// Relative error with an absolute floor `atol` below which both values are
/// indistinguishable from rounding noise.
pub fn relative_error(a: f64, b: f64, atol: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(atol)
}

/// Compares backward-pass gradients of `loss` against the fourth-order
/// central difference
/// `(L(p - 2h) - 8 L(p - h) + 8 L(p + h) - L(p + 2h)) / 12h` at up to `per_tensor` coordinates of every
/// parameter tensor in `params`.
///
/// When the stencil points fall on different smooth pieces (see
/// [`Graph::kink_signature`]) the step is shrunk tenfold, at most
/// [`STEP_SHRINKS`] times; a coordinate that still straddles a kink is
/// replaced by another one drawn from the same tensor.
pub fn check_gradients(
    params: &mut ParamStore,
    per_tensor: usize,
    step: f64,
    atol: f64,
    seed: u64,
    loss: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true)?;
    let l = loss(&mut g, &vars)?;
    g.backward(l)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    drop(g);

    let eval = |params: &ParamStore| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false)?;
        let l = loss(&mut g, &vars)?;
        Ok((g.scalar(l), g.kink_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheck {
        worst_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        redrawn: 0,
    };
    for k in 0..params.len() {
        let n = params.tensors()[k].len();
        let order = sample(&mut rng, n, n).into_vec();
        let mut done = 0;
        for idx in order {
            if done == per_tensor {
                break;
            }
            let orig = params.tensors()[k].data[idx];
            let mut numeric = None;
            let mut h = step;
            for _ in 0..=STEP_SHRINKS {
                let mut vals = [0.0; 4];
                let mut sigs = [0u64; 4];
                for (j, off) in [-2.0, -1.0, 1.0, 2.0].into_iter().enumerate() {
                    params.tensors_mut()[k].data[idx] = orig + off * h;
                    (vals[j], sigs[j]) = eval(params)?;
                }
                if sigs.iter().all(|&s| s == sigs[0]) {
                    numeric = Some((vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (12.0 * h));
                    break;
                }
                h *= 0.1;
            }
            params.tensors_mut()[k].data[idx] = orig;
            let Some(numeric) = numeric else {
                report.redrawn += 1;
                continue;
            };
            done += 1;
            let a = analytic[k][idx];
            let rel = relative_error(a, numeric, atol);
            report.checked += 1;
            if rel > report.worst_rel_error || report.worst_param.is_empty() {
                report.worst_rel_error = rel;
                report.worst_param = params.names()[k].clone();
                report.worst_index = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
