//! Run configuration: a TOML file with one table per stage, then
//! `CTLC_<SECTION>__<KEY>` environment variables, then `--set` pairs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use ganlc::gan::TrainConfig;
use ganlc::io::Dtype;
use ganlc::sim::DatasetSpec;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::fail::{Failure, Kind};

pub const ENV_PREFIX: &str = "CTLC_";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: DatasetSpec,
    pub gan: TrainConfig,
    pub paths: Paths,
    pub io: IoConfig,
    pub train: TrainOptions,
    pub eval: EvalConfig,
    pub plot: PlotConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory (or its manifest) read by `train`, `eval` and `plot`.
    pub data: Option<PathBuf>,
    /// Extra datasets evaluated as further settings.
    pub extra_data: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub nolc_checkpoint: Option<PathBuf>,
    /// Output directory of a previous `eval`.
    pub eval: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub dtype: Dtype,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig { dtype: Dtype::F32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub resume: Option<PathBuf>,
    pub montages: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            checkpoint_every: 0,
            resume: None,
            montages: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fbp")]
    Fbp,
    #[serde(rename = "gan-nolc")]
    GanNoLc,
    #[serde(rename = "gan-lc")]
    GanLc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::GanNoLc => "gan-nolc",
            Method::GanLc => "gan-lc",
        }
    }

    pub fn parse(s: &str) -> anyhow::Result<Self> {
        match s {
            "fbp" => Ok(Method::Fbp),
            "gan-nolc" => Ok(Method::GanNoLc),
            "gan-lc" => Ok(Method::GanLc),
            other => bail!("unknown method '{other}' (expected fbp, gan-nolc or gan-lc)"),
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        self != Method::Fbp
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub peak: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: vec![Method::Fbp, Method::GanNoLc, Method::GanLc],
            peak: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// View counts on the sweep axis; empty plots every evaluated setting.
    pub sweep: Vec<usize>,
    pub debug_flow: bool,
    pub arrow_stride: usize,
    pub arrow_gain: f64,
    pub scale: u32,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            sweep: Vec::new(),
            debug_flow: false,
            arrow_stride: 4,
            arrow_gain: 2.0,
            scale: 4,
        }
    }
}

impl RunConfig {
    /// File, environment and `key=value` overrides, merged in that order.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>, sets: &[String]) -> Result<Self, Failure> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::new(Kind::MissingInput, anyhow!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Failure::config(anyhow!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        env.sort();
        for (k, v) in env {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase().replace("__", ".");
            set_path(&mut root, &key, &v).map_err(|e| Failure::config(e.context(format!("environment variable {k}"))))?;
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Failure::config(anyhow!("--set expects section.key=value, got '{s}'")))?;
            set_path(&mut root, k.trim(), v.trim()).map_err(|e| Failure::config(e.context(format!("--set {s}"))))?;
        }
        Self::from_table(root)
    }

    pub fn from_table(root: toml::Table) -> Result<Self, Failure> {
        let input = Value::Table(root);
        let cfg: RunConfig = input.clone().try_into().map_err(|e: toml::de::Error| Failure::config(anyhow!("{}", e.message())))?;
        let canonical = Value::try_from(&cfg).map_err(|e| Failure::config(anyhow!("{e}")))?;
        if let Some(field) = unknown_field(&input, &canonical, "") {
            return Err(Failure::config(anyhow!("unknown field '{field}'")));
        }
        cfg.validate().map_err(Failure::config)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.sim.validate().context("sim")?;
        self.gan.validate().context("gan")?;
        if !(self.eval.peak > 0.0 && self.eval.peak.is_finite()) {
            bail!("eval.peak must be positive, got {}", self.eval.peak);
        }
        if self.eval.methods.is_empty() {
            bail!("eval.methods must name at least one method");
        }
        if self.plot.arrow_stride == 0 || self.plot.scale == 0 {
            bail!("plot.arrow_stride and plot.scale must be positive");
        }
        if self.plot.sweep.contains(&0) {
            bail!("plot.sweep view counts must be positive");
        }
        Ok(())
    }
}

/// Parses `raw` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, key: &str, raw: &str) -> anyhow::Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key '{key}'");
    }
    let (last, head) = parts.split_last().expect("split yields one part");
    let mut table = root;
    for p in head {
        let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| anyhow!("'{p}' in '{key}' is not a table"))?;
    }
    table.insert(last.to_string(), parse_value(raw));
    Ok(())
}

/// First key present in `input` that did not survive deserialization.
fn unknown_field(input: &Value, canonical: &Value, prefix: &str) -> Option<String> {
    let (Value::Table(a), Value::Table(b)) = (input, canonical) else {
        return None;
    };
    for (k, v) in a {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match b.get(k) {
            None => return Some(path),
            Some(c) => {
                if let Some(f) = unknown_field(v, c, &path) {
                    return Some(f);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(sets: &[&str]) -> Result<RunConfig, Failure> {
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        RunConfig::load(None, Vec::new(), &sets)
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = load(&[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn overrides_apply_in_order() {
        let env = vec![
            ("CTLC_SIM__SIGMA".to_string(), "0.5".to_string()),
            ("CTLC_GAN__ADAM__LR".to_string(), "0.001".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ];
        let cfg = RunConfig::load(None, env, &["sim.sigma=0".into(), "gan.flow_mode=learned".into()]).unwrap();
        assert_eq!(cfg.sim.sigma, 0.0);
        assert_eq!(cfg.gan.adam.lr, 0.001);
        assert_eq!(cfg.gan.flow_mode.as_str(), "learned");
    }

    #[test]
    fn unknown_and_invalid_fields_are_config_errors() {
        let e = load(&["sim.sigmaa=1"]).unwrap_err();
        assert_eq!(e.kind, Kind::Config);
        assert!(e.to_string().contains("sim.sigmaa"), "{e}");
        let e = load(&["gan.adam.betta=1"]).unwrap_err();
        assert!(e.to_string().contains("gan.adam.betta"), "{e}");
        assert_eq!(load(&["sim.n_views=0"]).unwrap_err().kind, Kind::Config);
        assert_eq!(load(&["eval.methods=[\"sart\"]"]).unwrap_err().kind, Kind::Config);
        assert_eq!(load(&["noequals"]).unwrap_err().kind, Kind::Config);
    }

    #[test]
    fn file_parses_sections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[sim]\nn_views = 30\ndepth = 8\n[eval]\nmethods = [\"fbp\"]\n[plot]\nsweep = [30, 60]\n").unwrap();
        let cfg = RunConfig::load(Some(&p), Vec::new(), &[]).unwrap();
        assert_eq!(cfg.sim.n_views, 30);
        assert_eq!(cfg.eval.methods, vec![Method::Fbp]);
        assert_eq!(cfg.plot.sweep, vec![30, 60]);
        let missing = RunConfig::load(Some(&dir.path().join("none.toml")), Vec::new(), &[]).unwrap_err();
        assert_eq!(missing.kind, Kind::MissingInput);
    }
}
