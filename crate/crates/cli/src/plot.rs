use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use ganlc::flow::{arrow_overlay, estimate_flow};
use ganlc::io::{load_image, montage, save_png, save_rgb_png};
use ganlc::sim::{collect_batches, load_dataset, validation_sinograms};
use ganlc::{Image, Sinogram};

use crate::chart::{line_chart, Series};
use crate::config::{Method, RunConfig};
use crate::eval::{recon_name, EvalIndex, SettingEntry, TABLE_NAME};
use crate::fail::{CliResult, Context, Failure};

pub const SWEEP_NAME: &str = "sweep.csv";

/// Sinogram rescaled to `[0, 1]` and resampled onto an `h x w` panel.
pub fn sinogram_panel(s: &Sinogram, h: usize, w: usize) -> Image {
    let (lo, hi) = s.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    Image::from_fn(h, w, |r, c| {
        let view = (r * s.n_views() / h).min(s.n_views() - 1);
        let det = (c * s.n_detectors() / w).min(s.n_detectors() - 1);
        (s.get(view, det) - lo) / span
    })
}

/// Settings on the sweep axis, ordered by view count.
fn sweep_settings<'a>(index: &'a EvalIndex, sweep: &[usize]) -> CliResult<Vec<&'a SettingEntry>> {
    let mut chosen: Vec<&SettingEntry> = if sweep.is_empty() {
        index.settings.iter().collect()
    } else {
        sweep
            .iter()
            .map(|&nv| {
                index
                    .settings
                    .iter()
                    .find(|s| s.n_views == nv)
                    .ok_or_else(|| Failure::missing(format!("no evaluated setting with N_v = {nv}")))
            })
            .collect::<CliResult<_>>()?
    };
    chosen.sort_by_key(|s| s.n_views);
    chosen.dedup_by_key(|s| s.n_views);
    Ok(chosen)
}

pub struct PlotOutputs {
    pub montages: usize,
    pub sweep_points: usize,
    pub flow_overlays: usize,
}

pub fn run(cfg: &RunConfig, eval_dir: &Path, out: Option<PathBuf>) -> CliResult<PlotOutputs> {
    let index = EvalIndex::load(eval_dir)?;
    if !eval_dir.join(TABLE_NAME).exists() {
        return Err(Failure::missing(format!("no {TABLE_NAME} in {}", eval_dir.display())));
    }
    let first = index.settings.first().ok_or_else(|| Failure::missing("evaluation lists no settings"))?;
    let lc = index
        .method_position(Method::GanLc)
        .ok_or_else(|| Failure::missing("montages need gan-lc reconstructions in the evaluation"))?;
    let out = out.unwrap_or_else(|| eval_dir.join("figures"));
    fs::create_dir_all(&out)?;

    let (m, volumes) = load_dataset(&first.data).at(format!("loading {}", first.data.display()))?;
    let ds = collect_batches(&volumes, m.spec.val_fraction)?;
    let sinos = validation_sinograms(&volumes, m.spec.val_fraction);
    if ds.val.len() != first.slices {
        return Err(Failure::config(anyhow!(
            "dataset {} has {} validation slices, evaluation recorded {}",
            first.data.display(),
            ds.val.len(),
            first.slices
        )));
    }
    let lc_dir = eval_dir.join(&first.dir).join(index.methods[lc].as_str());
    for (k, (b, sino)) in ds.val.iter().zip(&sinos).enumerate() {
        let p = lc_dir.join(recon_name(k));
        let x = load_image(&p).map_err(|_| Failure::missing(format!("missing reconstruction {}", p.display())))?;
        let (h, w) = b.s.shape();
        let panel = sinogram_panel(sino, h, w);
        save_png(out.join(format!("montage_{k:04}.png")), &montage(&[&panel, &b.s, &x, &b.target], 2)?)?;
    }

    let settings = sweep_settings(&index, &cfg.plot.sweep)?;
    let xs: Vec<f64> = settings.iter().map(|s| s.n_views as f64).collect();
    let mut csv = String::from("n_views,method,psnr,ssim\n");
    for s in &settings {
        for (i, method) in index.methods.iter().enumerate() {
            csv.push_str(&format!("{},{},{:.6},{:.6}\n", s.n_views, method.as_str(), s.psnr[i], s.ssim[i]));
        }
    }
    fs::write(out.join(SWEEP_NAME), csv)?;
    for (name, pick) in [("psnr", 0), ("ssim", 1)] {
        let series: Vec<Series> = (0..index.methods.len())
            .map(|i| Series {
                ys: settings.iter().map(|s| if pick == 0 { s.psnr[i] } else { s.ssim[i] }).collect(),
            })
            .collect();
        save_rgb_png(out.join(format!("sweep_{name}.png")), &line_chart(&xs, &series))?;
    }

    let mut overlays = 0;
    if cfg.plot.debug_flow {
        let dir = out.join("flow");
        fs::create_dir_all(&dir)?;
        for (k, b) in ds.val.iter().enumerate() {
            for (j, n) in b.neighbors.slices().iter().enumerate() {
                let f = estimate_flow(n, &b.s, cfg.gan.flow_alpha, cfg.gan.flow_iters)?;
                let img = arrow_overlay(&b.s, &f, cfg.plot.arrow_stride, cfg.plot.scale, cfg.plot.arrow_gain);
                save_rgb_png(dir.join(format!("flow_{k:04}_{j}.png")), &img)?;
                overlays += 1;
            }
        }
    }
    Ok(PlotOutputs {
        montages: ds.val.len(),
        sweep_points: settings.len(),
        flow_overlays: overlays,
    })
}
