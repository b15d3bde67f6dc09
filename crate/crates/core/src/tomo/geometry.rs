use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Parallel-beam acquisition geometry over a square image.
///
/// View `k` sits at angle `k * pi / n_views`. Detector bin `d` is offset
/// `(d - (n_detectors - 1) / 2) * detector_spacing` pixels from the rotation
/// centre, which coincides with the image centre.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    n_views: usize,
    n_detectors: usize,
    detector_spacing: f64,
    image_size: usize,
    angles: Vec<f64>,
}

impl ScanGeometry {
    /// Geometry with the narrowest detector spacing (at least one pixel) whose
    /// array still covers the image diagonal.
    pub fn new(n_views: usize, n_detectors: usize, image_size: usize) -> Result<Self> {
        let min_span = std::f64::consts::SQRT_2 * image_size as f64;
        let spacing = (min_span / n_detectors.max(1) as f64).max(1.0);
        Self::with_spacing(n_views, n_detectors, image_size, spacing)
    }

    pub fn with_spacing(
        n_views: usize,
        n_detectors: usize,
        image_size: usize,
        detector_spacing: f64,
    ) -> Result<Self> {
        if n_views == 0 || n_detectors == 0 || image_size == 0 {
            return Err(Error::invalid(format!(
                "geometry extents must be positive (views {n_views}, detectors {n_detectors}, size {image_size})"
            )));
        }
        if !(detector_spacing.is_finite() && detector_spacing > 0.0) {
            return Err(Error::invalid(format!(
                "detector spacing must be positive, got {detector_spacing}"
            )));
        }
        let span = n_detectors as f64 * detector_spacing;
        let diag = std::f64::consts::SQRT_2 * image_size as f64;
        if span < diag * (1.0 - 1e-12) {
            return Err(Error::invalid(format!(
                "detector span {span:.3} does not cover the image diagonal {diag:.3}"
            )));
        }
        let angles = (0..n_views)
            .map(|k| k as f64 * PI / n_views as f64)
            .collect();
        Ok(ScanGeometry {
            n_views,
            n_detectors,
            detector_spacing,
            image_size,
            angles,
        })
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Signed offset of detector `d` from the rotation centre, in pixels.
    pub fn detector_offset(&self, d: usize) -> f64 {
        (d as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_uniform_over_half_turn() {
        let g = ScanGeometry::new(4, 96, 64).unwrap();
        assert_eq!(g.angles(), &[0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0]);
        assert!(g.angles().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn spacing_stretches_for_short_arrays() {
        let g = ScanGeometry::new(10, 32, 64).unwrap();
        assert!(g.n_detectors() as f64 * g.detector_spacing() >= 64.0 * 2f64.sqrt() - 1e-9);
        assert_eq!(ScanGeometry::new(10, 96, 64).unwrap().detector_spacing(), 1.0);
    }

    #[test]
    fn rejects_uncovered_diagonal() {
        assert!(ScanGeometry::with_spacing(10, 64, 64, 1.0).is_err());
        assert!(ScanGeometry::new(0, 96, 64).is_err());
    }

    #[test]
    fn detector_offsets_are_centred() {
        let g = ScanGeometry::new(1, 4, 2).unwrap();
        assert_eq!(g.detector_offset(0), -1.5);
        assert_eq!(g.detector_offset(3), 1.5);
    }
}
