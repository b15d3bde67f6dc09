use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use ganlc::gan::GanState;
use ganlc::io::save_image;
use ganlc::metrics::MetricReport;
use ganlc::sim::{read_manifest, DatasetManifest};
use ganlc::Image;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::fail::{CliResult, Context, Failure};
use crate::lock::DirLock;
use crate::train::{load_batches, load_state};

pub const TABLE_NAME: &str = "table.csv";
pub const INDEX_NAME: &str = "eval.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingEntry {
    /// `N_v/N_d/sigma`.
    pub label: String,
    pub n_views: usize,
    pub data: PathBuf,
    /// Directory of per-slice outputs, relative to the eval directory.
    pub dir: String,
    pub slices: usize,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalIndex {
    pub methods: Vec<Method>,
    pub settings: Vec<SettingEntry>,
}

impl EvalIndex {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let p = dir.join(INDEX_NAME);
        let text = fs::read_to_string(&p).map_err(|_| Failure::missing(format!("no evaluation index at {}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::missing(anyhow!("{}: {e}", p.display())))
    }

    pub fn method_position(&self, m: Method) -> Option<usize> {
        self.methods.iter().position(|&x| x == m)
    }
}

pub fn recon_name(k: usize) -> String {
    format!("val_{k:04}.ctlc")
}

/// Methods as rows, `psnr[setting]` and `ssim[setting]` column pairs.
pub fn format_table(index: &EvalIndex) -> String {
    let mut out = String::from("method");
    for s in &index.settings {
        out.push_str(&format!(",psnr[{}],ssim[{}]", s.label, s.label));
    }
    out.push('\n');
    for (i, m) in index.methods.iter().enumerate() {
        out.push_str(m.as_str());
        for s in &index.settings {
            out.push_str(&format!(",{:.6},{:.6}", s.psnr[i], s.ssim[i]));
        }
        out.push('\n');
    }
    out
}

struct Models {
    lc: Option<GanState>,
    nolc: Option<GanState>,
}

fn load_models(cfg: &RunConfig, methods: &[Method]) -> CliResult<Models> {
    let needs = |m| methods.contains(&m);
    if !methods.iter().any(|m| m.needs_checkpoint()) {
        return Ok(Models { lc: None, nolc: None });
    }
    let ckpt = cfg.paths.checkpoint.as_deref();
    let lc = match (needs(Method::GanLc), ckpt) {
        (true, Some(p)) => Some(load_state(p, false)?),
        (true, None) => return Err(Failure::missing("gan-lc evaluation needs paths.checkpoint (--checkpoint)")),
        (false, _) => None,
    };
    let nolc = if needs(Method::GanNoLc) {
        match (&cfg.paths.nolc_checkpoint, ckpt) {
            (Some(p), _) => Some(load_state(p, false)?.without_coherence()),
            (None, Some(p)) => Some(match &lc {
                Some(s) => s.without_coherence(),
                None => load_state(p, false)?.without_coherence(),
            }),
            (None, None) => return Err(Failure::missing("gan-nolc evaluation needs a checkpoint")),
        }
    } else {
        None
    };
    Ok(Models { lc, nolc })
}

fn slug(label: &str) -> String {
    label.replace('/', "_")
}

pub fn run(cfg: &RunConfig, data: &[PathBuf], out: &Path) -> CliResult<EvalIndex> {
    if data.is_empty() {
        return Err(Failure::missing("eval needs at least one dataset (--data)"));
    }
    let mut methods = cfg.eval.methods.clone();
    methods.sort();
    methods.dedup();
    let manifests: Vec<DatasetManifest> = data
        .iter()
        .map(|d| {
            let p = ganlc::sim::manifest_path(d);
            if !p.exists() {
                return Err(Failure::missing(format!("no dataset manifest at {}", p.display())));
            }
            read_manifest(&p).at(format!("reading {}", p.display()))
        })
        .collect::<CliResult<_>>()?;
    let models = load_models(cfg, &methods)?;
    let _lock = DirLock::acquire(out)?;

    let mut settings = Vec::with_capacity(data.len());
    for (k, (d, m)) in data.iter().zip(&manifests).enumerate() {
        let ds = load_batches(d)?;
        if ds.val.is_empty() {
            return Err(Failure::config(anyhow!("dataset {} has no validation slices", d.display())));
        }
        let dir = format!("s{k}_{}", slug(&m.setting));
        let targets: Vec<&Image> = ds.val.iter().map(|b| &b.target).collect();
        let mut entry = SettingEntry {
            label: m.setting.clone(),
            n_views: m.spec.n_views,
            data: fs::canonicalize(d).unwrap_or_else(|_| d.clone()),
            dir: dir.clone(),
            slices: ds.val.len(),
            psnr: Vec::new(),
            ssim: Vec::new(),
        };
        for &method in &methods {
            let recon: Vec<Image> = match method {
                Method::Fbp => ds.val.iter().map(|b| b.s.clone()).collect(),
                Method::GanLc => models.lc.as_ref().expect("loaded above").evaluate(&ds.val).at("gan-lc")?.1,
                Method::GanNoLc => models.nolc.as_ref().expect("loaded above").evaluate(&ds.val).at("gan-nolc")?.1,
            };
            let report = MetricReport::evaluate(recon.iter().zip(targets.iter().copied()), cfg.eval.peak)?;
            let mdir = out.join(&dir).join(method.as_str());
            fs::create_dir_all(&mdir)?;
            for (i, x) in recon.iter().enumerate() {
                save_image(mdir.join(recon_name(i)), x, cfg.io.dtype)?;
            }
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            fs::write(out.join(&dir).join(format!("{}.csv", method.as_str())), csv)?;
            eprintln!("{:<9} {:<12} psnr {:.3}  ssim {:.4}", method.as_str(), m.setting, report.mean_psnr(), report.mean_ssim());
            entry.psnr.push(report.mean_psnr());
            entry.ssim.push(report.mean_ssim());
        }
        settings.push(entry);
    }
    let index = EvalIndex { methods, settings };
    fs::write(out.join(TABLE_NAME), format_table(&index))?;
    fs::write(out.join(INDEX_NAME), serde_json::to_string_pretty(&index).map_err(anyhow::Error::from)? + "\n")?;
    print!("{}", format_table(&index));
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_row_per_method_and_pair_per_setting() {
        let e = |label: &str, p: Vec<f64>| SettingEntry {
            label: label.into(),
            n_views: 0,
            data: PathBuf::new(),
            dir: String::new(),
            slices: 1,
            ssim: p.iter().map(|v| v / 100.0).collect(),
            psnr: p,
        };
        let index = EvalIndex {
            methods: vec![Method::Fbp, Method::GanLc],
            settings: vec![e("30/96/0.0", vec![10.0, 12.0]), e("60/96/0.0", vec![14.0, 15.5])],
        };
        let t = format_table(&index);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "method,psnr[30/96/0.0],ssim[30/96/0.0],psnr[60/96/0.0],ssim[60/96/0.0]");
        assert_eq!(lines[2], "gan-lc,12.000000,0.120000,15.500000,0.155000");
    }
}
