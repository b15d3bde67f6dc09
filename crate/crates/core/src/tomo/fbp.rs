use std::f64::consts::PI;

use rustfft::{num_complex::Complex64, FftPlanner};

use super::{back_project, Image, ScanGeometry, Sinogram};
use crate::error::{Error, Result};

/// Apodization applied on top of the ramp response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterWindow {
    #[default]
    Ramp,
    Hann,
}

impl std::str::FromStr for FilterWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ramp" => Ok(FilterWindow::Ramp),
            "hann" => Ok(FilterWindow::Hann),
            other => Err(Error::invalid(format!("unknown filter window '{other}'"))),
        }
    }
}

/// Padded row length: twice the next power of two above the detector count.
pub fn padded_len(n_detectors: usize) -> usize {
    2 * n_detectors.next_power_of_two()
}

/// Frequency response of the ramp filter on a padded row of length `len`.
///
/// The response is the DFT of the band-limited spatial ramp kernel
/// (`h[0] = 1/4`, `h[n] = -1/(pi n)^2` for odd `n`), which tracks `|f|` while
/// keeping the correct DC term. It is scaled by two so that the backprojection
/// constant `pi / (2 n_views)` yields unit-gain reconstruction.
pub fn ramp_response(len: usize, window: FilterWindow) -> Vec<f64> {
    let mut kernel = vec![Complex64::new(0.0, 0.0); len];
    kernel[0].re = 0.25;
    for n in 1..=len / 2 {
        if n % 2 == 1 {
            let h = -1.0 / (PI * n as f64).powi(2);
            kernel[n].re = h;
            if n != len - n {
                kernel[len - n].re = h;
            }
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut kernel);
    (0..len)
        .map(|k| {
            let f = k.min(len - k) as f64 / len as f64;
            let apod = match window {
                FilterWindow::Ramp => 1.0,
                FilterWindow::Hann => 0.5 + 0.5 * (2.0 * PI * f).cos(),
            };
            2.0 * kernel[k].re * apod
        })
        .collect()
}

/// Convolves every view with the ramp filter in the frequency domain.
pub fn filter_sinogram(sino: &Sinogram, window: FilterWindow) -> Result<Sinogram> {
    let nd = sino.n_detectors();
    if nd < 2 {
        return Err(Error::invalid(format!(
            "filtered backprojection needs at least 2 detectors, got {nd}"
        )));
    }
    let len = padded_len(nd);
    let response = ramp_response(len, window);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let mut out = Sinogram::zeros(sino.n_views(), nd);
    for v in 0..sino.n_views() {
        for (slot, &x) in buf.iter_mut().zip(sino.row(v).iter().chain(std::iter::repeat(&0.0))) {
            *slot = Complex64::new(x, 0.0);
        }
        fwd.process(&mut buf);
        for (b, &h) in buf.iter_mut().zip(&response) {
            *b *= h;
        }
        inv.process(&mut buf);
        let scale = 1.0 / len as f64;
        for (o, b) in out.row_mut(v).iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }
    Ok(out)
}

/// Filtered backprojection: ramp filter, adjoint projection, `pi / (2 n_views)`.
pub fn fbp(sino: &Sinogram, geom: &ScanGeometry, window: FilterWindow) -> Result<Image> {
    if (sino.n_views(), sino.n_detectors()) != (geom.n_views(), geom.n_detectors()) {
        return Err(Error::dims(
            "fbp",
            (geom.n_views(), geom.n_detectors()),
            (sino.n_views(), sino.n_detectors()),
        ));
    }
    let filtered = filter_sinogram(sino, window)?;
    let mut img = back_project(&filtered, geom)?;
    let scale = PI / (2.0 * geom.n_views() as f64);
    for v in img.data_mut() {
        *v *= scale;
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_rule() {
        assert_eq!(padded_len(96), 256);
        assert_eq!(padded_len(128), 256);
        assert_eq!(padded_len(400), 1024);
    }

    #[test]
    fn ramp_response_tracks_abs_frequency() {
        let len = 256;
        let h = ramp_response(len, FilterWindow::Ramp);
        // Band-limited ramp: DC slightly positive, Nyquist near 2 * 0.5.
        assert!(h[0] > 0.0 && h[0] < 0.01);
        assert!((h[len / 2] - 1.0).abs() < 0.01);
        for k in 1..len / 2 {
            let f = k as f64 / len as f64;
            assert!((h[k] - 2.0 * f).abs() < 0.01, "k={k}");
            assert!((h[k] - h[len - k]).abs() < 1e-12);
        }
        let hann = ramp_response(len, FilterWindow::Hann);
        assert!(hann[len / 2].abs() < 1e-9);
    }

    #[test]
    fn zero_sinogram_gives_zero_image() {
        let g = ScanGeometry::new(30, 48, 32).unwrap();
        let img = fbp(&Sinogram::zeros(30, 48), &g, FilterWindow::Ramp).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_detectors_rejected() {
        let s = Sinogram::zeros(4, 1);
        assert!(filter_sinogram(&s, FilterWindow::Ramp).is_err());
    }
}
