use crate::error::{Error, Result};
use crate::tomo::Image;

/// Dense per-pixel displacement between two slices.
///
/// `u` runs along columns (the `w` axis), `v` along rows (the `h` axis). The
/// field is stored as a *backward* displacement: pixel `p` of the current
/// slice is found at `p + (v, u)` in the neighbour, which is what [`warp`]
/// consumes. It is therefore the negation of the brightness-constancy
/// velocity that moves the neighbour onto the current slice.
///
/// [`warp`]: super::warp
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::dims(
                "FlowField::new",
                height * width,
                (u.len(), v.len()),
            ));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("FlowField::new".into()));
        }
        Ok(FlowField { height, width, u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            height,
            width,
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn constant(height: usize, width: usize, u: f64, v: f64) -> Self {
        FlowField {
            height,
            width,
            u: vec![u; height * width],
            v: vec![v; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        let i = row * self.width + col;
        (self.u[i], self.v[i])
    }

    pub fn magnitude(&self) -> Image {
        Image::from_fn(self.height, self.width, |r, c| {
            let (u, v) = self.at(r, c);
            u.hypot(v)
        })
    }

    pub fn negated(&self) -> FlowField {
        FlowField {
            height: self.height,
            width: self.width,
            u: self.u.iter().map(|x| -x).collect(),
            v: self.v.iter().map(|x| -x).collect(),
        }
    }

    /// Channel-major `[u, v]` layout, as stored in containers and tensors.
    pub fn to_planar(&self) -> Vec<f64> {
        self.u.iter().chain(&self.v).copied().collect()
    }

    pub fn from_planar(height: usize, width: usize, data: &[f64]) -> Result<Self> {
        let n = height * width;
        if data.len() != 2 * n {
            return Err(Error::dims("FlowField::from_planar", 2 * n, data.len()));
        }
        FlowField::new(height, width, data[..n].to_vec(), data[n..].to_vec())
    }

    /// Mean endpoint error against a constant displacement over `mask` pixels.
    pub fn mean_endpoint_error(&self, u: f64, v: f64, mask: &[bool]) -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..self.u.len() {
            if mask[i] {
                sum += (self.u[i] - u).hypot(self.v[i] - v);
                count += 1;
            }
        }
        sum / count.max(1) as f64
    }
}
