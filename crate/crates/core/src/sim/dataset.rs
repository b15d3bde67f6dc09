//! Low-dose simulation of phantom stacks into training batches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::phantom::{make_phantom_volume, PhantomKind, PhantomVolume};
use crate::error::{Error, Result};
use crate::gan::SliceBatch;
use crate::io::Dtype;
use crate::seed::derive_seed;
use crate::tomo::{add_noise, fbp, forward_project, FilterWindow, Image, NoiseSpec, ScanGeometry, Sinogram};

/// Desk-scale noise level used when none is given: the noiseless to noisy
/// FBP PSNR ratio on the default data is about 0.51.
pub const DEFAULT_SIGMA: f64 = 1.45;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_views: usize,
    pub n_detectors: usize,
    pub sigma: f64,
    pub size: usize,
    pub depth: usize,
    pub seed: u64,
    /// Volumes generated by [`simulate_collection`]; the last `val_volumes`
    /// of them are held out whole.
    pub n_volumes: usize,
    pub val_volumes: usize,
    /// Fraction of each volume's slices, taken from its end, held out.
    pub val_fraction: f64,
    pub phantom: PhantomKind,
    pub coherence_scale: f64,
    pub filter: FilterWindow,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_views: 60,
            n_detectors: 96,
            sigma: DEFAULT_SIGMA,
            size: 64,
            depth: 64,
            seed: 0,
            n_volumes: 9,
            val_volumes: 1,
            val_fraction: 0.0,
            phantom: PhantomKind::Ellipsoids,
            coherence_scale: 1.0,
            filter: FilterWindow::Ramp,
        }
    }
}

impl DatasetSpec {
    pub fn geometry(&self) -> Result<ScanGeometry> {
        ScanGeometry::new(self.n_views, self.n_detectors, self.size)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        NoiseSpec::new(self.sigma, 0)?;
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return Err(Error::invalid(format!("val_fraction must lie in [0, 1], got {}", self.val_fraction)));
        }
        if self.size < 32 || self.depth < 2 {
            return Err(Error::invalid("size must be >= 32 and depth >= 2"));
        }
        if self.n_volumes == 0 || self.val_volumes > self.n_volumes {
            return Err(Error::invalid(format!(
                "need n_volumes >= 1 and val_volumes <= n_volumes, got {} and {}",
                self.n_volumes, self.val_volumes
            )));
        }
        Ok(())
    }

    /// `(N_v, N_d, sigma)` as in the settings header of result tables.
    pub fn setting_label(&self) -> String {
        format!("{}/{}/{:.1}", self.n_views, self.n_detectors, self.sigma)
    }

    pub fn phantom(&self, seed: u64) -> Result<PhantomVolume> {
        make_phantom_volume(self.phantom, self.size, self.depth, self.coherence_scale, seed)
    }

    /// Spec for volume `v` of a collection: its own phantom and noise seed.
    pub fn for_volume(&self, v: usize) -> DatasetSpec {
        DatasetSpec {
            seed: slice_seed(self.seed, (1u64 << 32) + v as u64),
            ..self.clone()
        }
    }

    pub fn is_val_volume(&self, v: usize) -> bool {
        v + self.val_volumes >= self.n_volumes
    }

    /// Number of trailing slices held out.
    pub fn val_count(&self, depth: usize) -> usize {
        ((self.val_fraction * depth as f64).round() as usize).min(depth)
    }
}

/// Derives an independent stream seed for slice `index` of a run seeded `seed`.
pub fn slice_seed(seed: u64, index: u64) -> u64 {
    derive_seed(seed, index)
}

/// Measurement and FBP recovery of one slice.
pub fn simulate_slice(
    target: &Image,
    geom: &ScanGeometry,
    sigma: f64,
    seed: u64,
    filter: FilterWindow,
) -> Result<(Sinogram, Image)> {
    let clean = forward_project(target, geom)?;
    let noisy = add_noise(&clean, NoiseSpec::new(sigma, seed)?);
    let s = fbp(&noisy, geom, filter)?;
    Ok((noisy, s))
}

/// Simulated slices of one volume split into training and validation blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<SliceBatch>,
    pub val: Vec<SliceBatch>,
    pub sinograms: Vec<Sinogram>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extend(&mut self, other: Dataset) {
        self.train.extend(other.train);
        self.val.extend(other.val);
        self.sinograms.extend(other.sinograms);
    }
}

/// Simulates every slice of `vol` and groups the recoveries into batches.
///
/// The last `spec.val_count(depth)` slices form the validation block; each
/// block takes neighbours only from itself, so no training input or target
/// comes from a validation slice.
pub fn build_dataset(vol: &PhantomVolume, spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let (h, w) = vol.size();
    if (h, w) != (spec.size, spec.size) {
        return Err(Error::dims("build_dataset volume", (spec.size, spec.size), (h, w)));
    }
    let geom = spec.geometry()?;
    let mut sinograms = Vec::with_capacity(vol.depth());
    let mut recoveries = Vec::with_capacity(vol.depth());
    for (i, x) in vol.slices.iter().enumerate() {
        let (y, s) = simulate_slice(x, &geom, spec.sigma, slice_seed(spec.seed, i as u64), spec.filter)?;
        sinograms.push(y);
        recoveries.push(s);
    }
    let cut = vol.depth() - spec.val_count(vol.depth());
    let train = SliceBatch::from_stack(&recoveries[..cut], &vol.slices[..cut], 0)?;
    let val = SliceBatch::from_stack(&recoveries[cut..], &vol.slices[cut..], cut)?;
    Ok(Dataset { train, val, sinograms })
}

/// One simulated volume of a collection.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedVolume {
    pub volume: PhantomVolume,
    pub sinograms: Vec<Sinogram>,
    pub recoveries: Vec<Image>,
    pub spec: DatasetSpec,
    pub held_out: bool,
}

impl SimulatedVolume {
    /// Index of the first validation slice under `val_fraction`.
    pub fn val_cut(&self, val_fraction: f64) -> usize {
        let n = self.volume.depth();
        if self.held_out {
            0
        } else {
            n - ((val_fraction * n as f64).round() as usize).min(n)
        }
    }
}

/// Sinograms of the validation slices, in the order [`collect_batches`]
/// emits them.
pub fn validation_sinograms(volumes: &[SimulatedVolume], val_fraction: f64) -> Vec<Sinogram> {
    volumes
        .iter()
        .flat_map(|sv| sv.sinograms[sv.val_cut(val_fraction).min(sv.sinograms.len())..].iter().cloned())
        .collect()
}

/// Simulates `spec.n_volumes` phantom volumes, each with seeds from
/// [`DatasetSpec::for_volume`].
pub fn simulate_collection(spec: &DatasetSpec) -> Result<Vec<SimulatedVolume>> {
    spec.validate()?;
    let geom = spec.geometry()?;
    (0..spec.n_volumes)
        .map(|v| {
            let vs = spec.for_volume(v);
            let volume = vs.phantom(vs.seed)?;
            let mut sinograms = Vec::with_capacity(volume.depth());
            let mut recoveries = Vec::with_capacity(volume.depth());
            for (i, x) in volume.slices.iter().enumerate() {
                let (y, s) = simulate_slice(x, &geom, vs.sigma, slice_seed(vs.seed, i as u64), vs.filter)?;
                sinograms.push(y);
                recoveries.push(s);
            }
            Ok(SimulatedVolume {
                volume,
                sinograms,
                recoveries,
                held_out: spec.is_val_volume(v),
                spec: vs,
            })
        })
        .collect()
}

/// Groups simulated volumes into batches. Held-out volumes go entirely to
/// validation; the others are split by `val_fraction` as in [`build_dataset`].
pub fn collect_batches(volumes: &[SimulatedVolume], val_fraction: f64) -> Result<Dataset> {
    let mut out = Dataset {
        train: Vec::new(),
        val: Vec::new(),
        sinograms: Vec::new(),
    };
    for sv in volumes {
        let targets = &sv.volume.slices;
        if sv.recoveries.len() != targets.len() {
            return Err(Error::dims("collect_batches", targets.len(), sv.recoveries.len()));
        }
        let cut = sv.val_cut(val_fraction);
        out.train.extend(SliceBatch::from_stack(&sv.recoveries[..cut], &targets[..cut], 0)?);
        out.val.extend(SliceBatch::from_stack(&sv.recoveries[cut..], &targets[cut..], cut)?);
        out.sinograms.extend(sv.sinograms.iter().cloned());
    }
    Ok(out)
}

/// Reads a raw little-endian `depth x height x width` volume and rescales it
/// to `[0, 1]` by its own minimum and maximum (a constant volume maps to 0).
pub fn load_raw_volume(path: impl AsRef<Path>, dims: (usize, usize, usize), dtype: Dtype) -> Result<PhantomVolume> {
    let path = path.as_ref();
    let (d, h, w) = dims;
    if d == 0 || h == 0 || w == 0 {
        return Err(Error::invalid(format!("volume dims must be positive, got {dims:?}")));
    }
    let bytes = std::fs::read(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let expected = (d * h * w * dtype.width()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = match dtype {
        Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("raw volume {}", path.display())));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    let slices = values
        .chunks_exact(h * w)
        .map(|c| Image::new(h, w, c.iter().map(|v| (v - lo) * scale).collect()))
        .collect::<Result<_>>()?;
    Ok(PhantomVolume {
        slices,
        coherence_scale: 0.0,
    })
}

/// Writes slices as a raw little-endian volume readable by [`load_raw_volume`].
pub fn save_raw_volume(path: impl AsRef<Path>, slices: &[Image], dtype: Dtype) -> Result<()> {
    let mut bytes = Vec::new();
    for v in slices.iter().flat_map(|s| s.data()) {
        match dtype {
            Dtype::F32 => bytes.extend((*v as f32).to_le_bytes()),
            Dtype::F64 => bytes.extend(v.to_le_bytes()),
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
