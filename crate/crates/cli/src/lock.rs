use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::anyhow;

use crate::fail::{CliResult, Failure, Kind};

pub const LOCK_NAME: &str = ".ganlc.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| Failure::new(Kind::Other, anyhow!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_NAME);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Failure::new(Kind::Other, anyhow!("{} is locked by another run (remove {} if stale)", dir.display(), path.display()))
            } else {
                Failure::new(Kind::Other, anyhow!("cannot lock {}: {e}", dir.display()))
            }
        })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(DirLock { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
