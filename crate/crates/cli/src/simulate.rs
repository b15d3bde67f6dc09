use std::fs;
use std::path::Path;

use ganlc::sim::{simulate_collection, write_dataset, DatasetManifest, MANIFEST_NAME};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::fail::{CliResult, Context};
use crate::lock::DirLock;

pub const CHECKSUMS_NAME: &str = "checksums.sha256";

/// `sha256sum`-style lines for the manifest and every slice file, sorted by path.
pub fn checksums(dir: &Path, manifest: &DatasetManifest) -> CliResult<String> {
    let mut files: Vec<&str> = manifest.files();
    files.push(MANIFEST_NAME);
    files.sort_unstable();
    let mut out = String::new();
    for f in files {
        let bytes = fs::read(dir.join(f)).at(format!("hashing {f}"))?;
        out.push_str(&format!("{}  {f}\n", hex::encode(Sha256::digest(&bytes))));
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<DatasetManifest> {
    let _lock = DirLock::acquire(out)?;
    let spec = &cfg.sim;
    let volumes = simulate_collection(spec).at("simulating volumes")?;
    let manifest = write_dataset(out, spec, &volumes, cfg.io.dtype).at(format!("writing {}", out.display()))?;
    fs::write(out.join(CHECKSUMS_NAME), checksums(out, &manifest)?).at("writing checksums")?;
    println!(
        "setting {} (N_v={}, N_d={}, sigma={}) -> {} volumes x {} slices in {}",
        manifest.setting,
        spec.n_views,
        spec.n_detectors,
        spec.sigma,
        manifest.volumes.len(),
        spec.depth,
        out.display()
    );
    Ok(manifest)
}
