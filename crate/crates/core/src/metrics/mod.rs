//! Full-reference image quality: PSNR and SSIM.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tomo::Image;

/// Reported PSNR when the two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in decibels.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    w
}

/// Separable "valid" Gaussian filtering.
fn filter_valid(data: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|j| kernel[j] * data[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| kernel[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all 11x11 Gaussian windows (sigma 1.5)
/// that fit inside the image.
pub fn ssim(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.same_shape(b, "ssim")?;
    let (h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("SSIM peak must be positive, got {peak}")));
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let kernel = gaussian_window();
    let (xa, xb) = (a.data(), b.data());
    let aa: Vec<f64> = xa.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = xb.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = xa.iter().zip(xb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(xa, h, w, &kernel);
    let mu_b = filter_valid(xb, h, w, &kernel);
    let e_aa = filter_valid(&aa, h, w, &kernel);
    let e_bb = filter_valid(&bb, h, w, &kernel);
    let e_ab = filter_valid(&ab, h, w, &kernel);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok((total / mu_a.len() as f64).clamp(-1.0, 1.0))
}

/// Per-slice PSNR/SSIM with their means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub psnr_db: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn evaluate<'a>(
        pairs: impl IntoIterator<Item = (&'a Image, &'a Image)>,
        peak: f64,
    ) -> Result<Self> {
        let mut report = MetricReport::default();
        for (recon, truth) in pairs {
            report.push(psnr(recon, truth, peak)?, ssim(recon, truth, peak)?);
        }
        Ok(report)
    }

    pub fn push(&mut self, psnr_db: f64, ssim: f64) {
        self.psnr_db.push(psnr_db);
        self.ssim.push(ssim);
    }

    pub fn len(&self) -> usize {
        self.psnr_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psnr_db.is_empty()
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr_db)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }

    /// `slice,psnr,ssim` rows followed by a `mean` summary row.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "slice,psnr,ssim")?;
        for (i, (p, s)) in self.psnr_db.iter().zip(&self.ssim).enumerate() {
            writeln!(out, "{i},{p:.6},{s:.6}")?;
        }
        writeln!(out, "mean,{:.6},{:.6}", self.mean_psnr(), self.mean_ssim())
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
