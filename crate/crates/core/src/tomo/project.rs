//! Joseph-style ray-driven projector and its exact transpose.
//!
//! Each ray is sampled every half pixel; every sample bilinearly interpolates
//! the image, with pixels outside the grid treated as zero. The back-projector
//! replays the same taps with the weights transposed, so
//! `<T x, y> == <x, T^T y>` holds up to summation rounding.

use super::{Image, ScanGeometry, Sinogram};
use crate::error::{Error, Result};

/// Distance between consecutive samples along a ray, in pixels.
pub const RAY_STEP: f64 = 0.5;

/// Visits every `(pixel index, weight)` tap of the ray `(view, det)`.
#[inline]
fn for_each_tap(geom: &ScanGeometry, view: usize, det: usize, mut visit: impl FnMut(usize, f64)) {
    let n = geom.image_size();
    let nf = n as f64;
    let half = (nf - 1.0) / 2.0;
    let theta = geom.angles()[view];
    let (sin, cos) = theta.sin_cos();
    let t = geom.detector_offset(det);

    // Rays are parametrised by arc length s along direction (-sin, cos).
    let radius = std::f64::consts::SQRT_2 * nf / 2.0 + 1.0;
    let k_total = 2 * (radius / RAY_STEP).ceil() as usize + 1;
    let k_mid = (k_total as f64 - 1.0) / 2.0;

    let col0 = t * cos + half;
    let row0 = t * sin + half;

    // Restrict s to the slab where at least one tap can land inside the grid.
    let (mut s_lo, mut s_hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (origin, slope) in [(col0, -sin), (row0, cos)] {
        if slope.abs() < 1e-12 {
            if origin <= -1.0 || origin >= nf {
                return;
            }
        } else {
            let a = (-1.0 - origin) / slope;
            let b = (nf - origin) / slope;
            s_lo = s_lo.max(a.min(b));
            s_hi = s_hi.min(a.max(b));
        }
    }
    if s_lo >= s_hi {
        return;
    }
    let k_lo = ((s_lo / RAY_STEP + k_mid).floor().max(0.0)) as usize;
    let k_hi = ((s_hi / RAY_STEP + k_mid).ceil().min(k_total as f64 - 1.0)) as usize;

    for k in k_lo..=k_hi {
        let s = (k as f64 - k_mid) * RAY_STEP;
        let col = col0 - s * sin;
        let row = row0 + s * cos;
        let c0 = col.floor();
        let r0 = row.floor();
        let fc = col - c0;
        let fr = row - r0;
        let (c0, r0) = (c0 as isize, r0 as isize);
        for (dr, wr) in [(0isize, 1.0 - fr), (1, fr)] {
            let r = r0 + dr;
            if r < 0 || r >= n as isize {
                continue;
            }
            for (dc, wc) in [(0isize, 1.0 - fc), (1, fc)] {
                let c = c0 + dc;
                if c < 0 || c >= n as isize {
                    continue;
                }
                let w = wr * wc * RAY_STEP;
                if w != 0.0 {
                    visit(r as usize * n + c as usize, w);
                }
            }
        }
    }
}

fn check_image(image: &Image, geom: &ScanGeometry) -> Result<()> {
    let n = geom.image_size();
    if image.shape() != (n, n) {
        return Err(Error::dims("forward_project", (n, n), image.shape()));
    }
    Ok(())
}

fn check_sino(sino: &Sinogram, geom: &ScanGeometry, context: &'static str) -> Result<()> {
    let want = (geom.n_views(), geom.n_detectors());
    let got = (sino.n_views(), sino.n_detectors());
    if want != got {
        return Err(Error::dims(context, want, got));
    }
    Ok(())
}

/// Discrete parallel-beam Radon transform.
pub fn forward_project(image: &Image, geom: &ScanGeometry) -> Result<Sinogram> {
    check_image(image, geom)?;
    let (nv, nd) = (geom.n_views(), geom.n_detectors());
    let px = image.data();
    let mut out = Sinogram::zeros(nv, nd);
    for v in 0..nv {
        let row = out.row_mut(v);
        for (d, bin) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for_each_tap(geom, v, d, |idx, w| acc += w * px[idx]);
            *bin = acc;
        }
    }
    Ok(out)
}

/// Exact transpose of [`forward_project`].
pub fn back_project(sino: &Sinogram, geom: &ScanGeometry) -> Result<Image> {
    check_sino(sino, geom, "back_project")?;
    let n = geom.image_size();
    let mut out = Image::zeros(n, n);
    let px = out.data_mut();
    for v in 0..geom.n_views() {
        for (d, &y) in sino.row(v).iter().enumerate() {
            if y == 0.0 {
                continue;
            }
            for_each_tap(geom, v, d, |idx, w| px[idx] += w * y);
        }
    }
    Ok(out)
}

/// Pixels that receive a nonzero weight from ray `(view, det)`.
pub fn ray_support(geom: &ScanGeometry, view: usize, det: usize) -> Vec<usize> {
    let mut idx = Vec::new();
    for_each_tap(geom, view, det, |i, _| idx.push(i));
    idx.sort_unstable();
    idx.dedup();
    idx
}
