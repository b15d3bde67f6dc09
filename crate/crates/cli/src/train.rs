use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use ganlc::gan::{log_header, FlowMode, GanState, TrainConfig};
use ganlc::io::{montage, save_png};
use ganlc::sim::{collect_batches, load_dataset, Dataset};

use crate::config::RunConfig;
use crate::fail::{CliResult, Context, Failure, Kind};
use crate::lock::DirLock;

pub const LOG_NAME: &str = "log.csv";
pub const LATEST_NAME: &str = "latest.ctlc";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ctlc")
}

/// Training and validation batches of an on-disk dataset.
pub fn load_batches(data: &Path) -> CliResult<Dataset> {
    let manifest = ganlc::sim::manifest_path(data);
    if !manifest.exists() {
        return Err(Failure::missing(format!("no dataset manifest at {}", manifest.display())));
    }
    let (m, volumes) = load_dataset(&manifest).at(format!("loading {}", manifest.display()))?;
    collect_batches(&volumes, m.spec.val_fraction).at("assembling batches")
}

/// Refuses a checkpoint whose networks differ from the configured ones.
fn check_compatible(ckpt: &TrainConfig, cfg: &TrainConfig) -> CliResult<()> {
    let mut diffs = Vec::new();
    if ckpt.flow_mode != cfg.flow_mode {
        diffs.push(format!("flow_mode {} vs {}", ckpt.flow_mode.as_str(), cfg.flow_mode.as_str()));
    }
    if ckpt.generator != cfg.generator {
        diffs.push(format!("generator {:?} vs {:?}", ckpt.generator, cfg.generator));
    }
    if ckpt.discriminator != cfg.discriminator {
        diffs.push(format!("discriminator {:?} vs {:?}", ckpt.discriminator, cfg.discriminator));
    }
    if cfg.flow_mode == FlowMode::Learned && ckpt.flownet != cfg.flownet {
        diffs.push(format!("flownet {:?} vs {:?}", ckpt.flownet, cfg.flownet));
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Failure::config(anyhow!("checkpoint shape mismatch: {}", diffs.join("; "))))
    }
}

pub fn load_state(path: &Path, with_optimizer: bool) -> CliResult<GanState> {
    if !path.exists() {
        return Err(Failure::missing(format!("no checkpoint at {}", path.display())));
    }
    GanState::load_checkpoint(path, with_optimizer).at(format!("loading checkpoint {}", path.display()))
}

/// Log lines kept on resume: headers and rows up to `epoch`.
fn kept_log(path: &Path, epoch: usize) -> CliResult<Option<Vec<String>>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(None);
    };
    let lines = text
        .lines()
        .filter(|l| match l.split(',').next().and_then(|e| e.parse::<usize>().ok()) {
            Some(e) => e <= epoch,
            None => true,
        })
        .map(str::to_string)
        .collect();
    Ok(Some(lines))
}

pub struct TrainOutcome {
    pub state: GanState,
    pub log: PathBuf,
}

pub fn run(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<TrainOutcome> {
    let ds = load_batches(data)?;
    if ds.train.is_empty() {
        return Err(Failure::config(anyhow!("dataset {} has no training slices", data.display())));
    }
    let _lock = DirLock::acquire(out)?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let log_path = out.join(LOG_NAME);

    let (mut state, mut lines) = match &cfg.train.resume {
        Some(path) => {
            let mut state = load_state(path, true)?;
            check_compatible(&state.config, &cfg.gan)?;
            state.config.epochs = cfg.gan.epochs;
            let lines = kept_log(&log_path, state.epoch)?.unwrap_or_else(|| log_header(&state.config).lines().map(str::to_string).collect());
            eprintln!("resuming from epoch {} of {}", state.epoch, path.display());
            (state, lines)
        }
        None => {
            let state = GanState::new(cfg.gan.clone()).at("gan")?;
            (state, log_header(&cfg.gan).lines().map(str::to_string).collect())
        }
    };

    while state.epoch < cfg.gan.epochs {
        let row = state.train_epoch(&ds.train, &ds.val).at(format!("epoch {}", state.epoch + 1))?;
        if !row.is_finite() {
            return Err(Failure::new(Kind::NonFinite, anyhow!("non-finite loss at epoch {}: {}", row.epoch, row.csv_row())));
        }
        eprintln!("epoch {:>4}  psnr {:.3}  ssim {:.4}", row.epoch, row.val_psnr, row.val_ssim);
        lines.push(row.csv_row());
        fs::write(&log_path, lines.join("\n") + "\n").at("writing log")?;
        let every = cfg.train.checkpoint_every;
        if every > 0 && row.epoch % every == 0 {
            state.save_checkpoint(ckpt_dir.join(checkpoint_name(row.epoch))).at("saving checkpoint")?;
        }
    }
    if !log_path.exists() {
        fs::write(&log_path, lines.join("\n") + "\n").at("writing log")?;
    }
    state.save_checkpoint(out.join(LATEST_NAME)).at("saving checkpoint")?;

    if cfg.train.montages && !ds.val.is_empty() {
        let dir = out.join("montages");
        fs::create_dir_all(&dir)?;
        let (_, recon) = state.evaluate(&ds.val).at("validation")?;
        for (k, (b, x)) in ds.val.iter().zip(&recon).enumerate() {
            let m = montage(&[&b.s, x, &b.target], 2)?;
            save_png(dir.join(format!("val_{k:04}.png")), &m)?;
        }
    }
    Ok(TrainOutcome { state, log: log_path })
}
