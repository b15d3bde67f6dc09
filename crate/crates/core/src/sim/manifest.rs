//! On-disk datasets: a JSON manifest next to per-slice CTLC files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetSpec, SimulatedVolume};
use super::phantom::PhantomVolume;
use crate::error::{Error, Result};
use crate::io::{load_image, load_sinogram, save_image, save_sinogram, Dtype};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "ctlc-dataset";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub index: usize,
    pub target: String,
    pub fbp: String,
    pub sino: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEntry {
    pub name: String,
    pub held_out: bool,
    pub seed: u64,
    pub slices: Vec<SliceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    /// `N_v/N_d/sigma`.
    pub setting: String,
    pub noiseless: bool,
    pub dtype: String,
    pub spec: DatasetSpec,
    pub volumes: Vec<VolumeEntry>,
}

impl DatasetManifest {
    pub fn slice_count(&self) -> usize {
        self.volumes.iter().map(|v| v.slices.len()).sum()
    }

    /// Every file the manifest names, relative to its directory.
    pub fn files(&self) -> Vec<&str> {
        self.volumes
            .iter()
            .flat_map(|v| &v.slices)
            .flat_map(|s| [s.target.as_str(), s.fbp.as_str(), s.sino.as_str()])
            .collect()
    }
}

/// Writes every volume under `dir` and returns the manifest, also saved as
/// `dir/manifest.json`.
pub fn write_dataset(dir: impl AsRef<Path>, spec: &DatasetSpec, volumes: &[SimulatedVolume], dtype: Dtype) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(volumes.len());
    for (v, sv) in volumes.iter().enumerate() {
        let name = format!("vol{v:03}");
        fs::create_dir_all(dir.join(&name))?;
        let mut slices = Vec::with_capacity(sv.volume.depth());
        for i in 0..sv.volume.depth() {
            let entry = SliceEntry {
                index: i,
                target: format!("{name}/{i:04}_target.ctlc"),
                fbp: format!("{name}/{i:04}_fbp.ctlc"),
                sino: format!("{name}/{i:04}_sino.ctlc"),
            };
            save_image(dir.join(&entry.target), &sv.volume.slices[i], dtype)?;
            save_image(dir.join(&entry.fbp), &sv.recoveries[i], dtype)?;
            save_sinogram(dir.join(&entry.sino), &sv.sinograms[i], dtype)?;
            slices.push(entry);
        }
        entries.push(VolumeEntry {
            name,
            held_out: sv.held_out,
            seed: sv.spec.seed,
            slices,
        });
    }
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        setting: spec.setting_label(),
        noiseless: spec.sigma == 0.0,
        dtype: dtype.to_string(),
        spec: spec.clone(),
        volumes: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_NAME), json + "\n")?;
    Ok(manifest)
}

/// Accepts either the manifest file or its directory.
pub fn manifest_path(path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = manifest_path(path);
    let text = fs::read_to_string(&path).map_err(|source| Error::Unreadable {
        path: path.clone(),
        source,
    })?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "{}: expected {MANIFEST_FORMAT} v{MANIFEST_VERSION}, found {} v{}",
            path.display(),
            m.format,
            m.version
        )));
    }
    m.spec.validate()?;
    Ok(m)
}

/// Loads the volumes a manifest lists.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<SimulatedVolume>)> {
    let mpath = manifest_path(&path);
    let m = read_manifest(&mpath)?;
    let dir = mpath.parent().unwrap_or(Path::new("."));
    let mut volumes = Vec::with_capacity(m.volumes.len());
    for (v, entry) in m.volumes.iter().enumerate() {
        let mut slices = Vec::with_capacity(entry.slices.len());
        let mut recoveries = Vec::with_capacity(entry.slices.len());
        let mut sinograms = Vec::with_capacity(entry.slices.len());
        for s in &entry.slices {
            slices.push(load_image(dir.join(&s.target))?);
            recoveries.push(load_image(dir.join(&s.fbp))?);
            sinograms.push(load_sinogram(dir.join(&s.sino))?);
        }
        volumes.push(SimulatedVolume {
            volume: PhantomVolume {
                slices,
                coherence_scale: m.spec.coherence_scale,
            },
            sinograms,
            recoveries,
            spec: DatasetSpec {
                seed: entry.seed,
                ..m.spec.for_volume(v)
            },
            held_out: entry.held_out,
        });
    }
    Ok((m, volumes))
}
