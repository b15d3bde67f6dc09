use super::FlowField;
use crate::error::{Error, Result};
use crate::tomo::Image;

/// Bilinear taps at `(row, col)` with coordinates clamped to the grid
/// (replicated border). Returns four `(index, weight)` pairs plus the
/// derivative weights along rows and columns, which vanish where clamped.
#[derive(Clone, Copy, Debug)]
pub struct BilinearTaps {
    pub idx: [usize; 4],
    pub weight: [f64; 4],
    /// d(sample)/d(row) = sum_k drow[k] * src[idx[k]]
    pub drow: [f64; 4],
    /// d(sample)/d(col) = sum_k dcol[k] * src[idx[k]]
    pub dcol: [f64; 4],
}

#[inline]
pub fn bilinear_taps(height: usize, width: usize, row: f64, col: f64) -> BilinearTaps {
    let hmax = (height - 1) as f64;
    let wmax = (width - 1) as f64;
    let (rin, cin) = (row > 0.0 && row < hmax, col > 0.0 && col < wmax);
    let r = row.clamp(0.0, hmax);
    let c = col.clamp(0.0, wmax);
    let r0 = (r.floor() as usize).min(height.saturating_sub(2));
    let c0 = (c.floor() as usize).min(width.saturating_sub(2));
    let r1 = (r0 + 1).min(height - 1);
    let c1 = (c0 + 1).min(width - 1);
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    let idx = [r0 * width + c0, r0 * width + c1, r1 * width + c0, r1 * width + c1];
    let weight = [
        (1.0 - fr) * (1.0 - fc),
        (1.0 - fr) * fc,
        fr * (1.0 - fc),
        fr * fc,
    ];
    let (gr, gc) = (if rin { 1.0 } else { 0.0 }, if cin { 1.0 } else { 0.0 });
    let drow = [-(1.0 - fc) * gr, -fc * gr, (1.0 - fc) * gr, fc * gr];
    let dcol = [-(1.0 - fr) * gc, (1.0 - fr) * gc, -fr * gc, fr * gc];
    BilinearTaps {
        idx,
        weight,
        drow,
        dcol,
    }
}

/// Backward warp: `out(p) = src(p + flow(p))`, bilinear, replicated border.
pub fn warp(src: &Image, flow: &FlowField) -> Result<Image> {
    if src.shape() != flow.shape() {
        return Err(Error::dims("flow::warp", src.shape(), flow.shape()));
    }
    let (h, w) = src.shape();
    let data = src.data();
    Ok(Image::from_fn(h, w, |r, c| {
        let (u, v) = flow.at(r, c);
        let taps = bilinear_taps(h, w, r as f64 + v, c as f64 + u);
        (0..4).map(|k| taps.weight[k] * data[taps.idx[k]]).sum()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::gaussian_blob;

    #[test]
    fn zero_flow_is_identity() {
        let a = gaussian_blob(16, 7.0, 8.0, 3.0, 1.0);
        assert_eq!(warp(&a, &FlowField::zeros(16, 16)).unwrap(), a);
    }

    #[test]
    fn integer_flow_shifts_exactly() {
        let a = Image::from_fn(10, 12, |r, c| (r * 12 + c) as f64 * 0.01);
        let out = warp(&a, &FlowField::constant(10, 12, 1.0, 0.0)).unwrap();
        for r in 0..10 {
            for c in 0..11 {
                assert_eq!(out.get(r, c), a.get(r, c + 1));
            }
            // replicated border
            assert_eq!(out.get(r, 11), a.get(r, 11));
        }
        let out = warp(&a, &FlowField::constant(10, 12, 0.0, -2.0)).unwrap();
        for r in 2..10 {
            for c in 0..12 {
                assert_eq!(out.get(r, c), a.get(r - 2, c));
            }
        }
    }

    #[test]
    fn true_flow_halves_mse() {
        let a = gaussian_blob(40, 20.0, 19.0, 5.0, 1.0);
        let truth = FlowField::constant(40, 40, 1.5, -0.5);
        let b = warp(&a, &truth).unwrap();
        let before = a.mse(&b).unwrap();
        let after = warp(&a, &truth).unwrap().mse(&b).unwrap();
        assert!(after <= 0.5 * before);
    }

    #[test]
    fn taps_sum_to_one_and_clamp() {
        for &(r, c) in &[(0.3, 0.7), (-3.0, 2.5), (9.9, 20.0)] {
            let t = bilinear_taps(10, 10, r, c);
            assert!((t.weight.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(t.idx.iter().all(|&i| i < 100));
        }
        let t = bilinear_taps(10, 10, -3.0, 2.5);
        assert!(t.drow.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn mismatch_rejected() {
        assert!(warp(&Image::zeros(4, 4), &FlowField::zeros(4, 5)).is_err());
    }
}
