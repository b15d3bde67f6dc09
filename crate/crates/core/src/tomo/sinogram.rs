use crate::error::{Error, Result};

/// Line-integral measurements, one row per view, one column per detector bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    n_views: usize,
    n_detectors: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn new(n_views: usize, n_detectors: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_views * n_detectors {
            return Err(Error::dims(
                "Sinogram::new",
                n_views * n_detectors,
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Sinogram::new".into()));
        }
        Ok(Sinogram {
            n_views,
            n_detectors,
            data,
        })
    }

    pub fn zeros(n_views: usize, n_detectors: usize) -> Self {
        Sinogram {
            n_views,
            n_detectors,
            data: vec![0.0; n_views * n_detectors],
        }
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, view: usize, det: usize) -> f64 {
        self.data[view * self.n_detectors + det]
    }

    pub fn row(&self, view: usize) -> &[f64] {
        &self.data[view * self.n_detectors..(view + 1) * self.n_detectors]
    }

    pub fn row_mut(&mut self, view: usize) -> &mut [f64] {
        &mut self.data[view * self.n_detectors..(view + 1) * self.n_detectors]
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}
