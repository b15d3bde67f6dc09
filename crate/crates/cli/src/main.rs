mod chart;
mod config;
mod eval;
mod fail;
mod lock;
mod plot;
mod simulate;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use fail::{CliResult, Failure};

/// Low-dose CT reconstruction with adjacent-slice coherence.
#[derive(Debug, Parser)]
#[command(name = "ganlc", version)]
struct Cli {
    /// TOML run configuration with [sim], [gan], [paths], [io], [train], [eval] and [plot] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one field, e.g. `--set sim.sigma=0` or `--set gan.adam.lr=1e-4`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate phantom volumes with their low-dose measurements and FBP recoveries.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the generator and discriminator on a simulated dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// classic, learned or none.
        #[arg(long)]
        flow: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Reconstruct validation slices and tabulate PSNR/SSIM per method and setting.
    Eval {
        /// Dataset directory; repeat for a multi-setting table.
        #[arg(long)]
        data: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Separately trained zero-flow model for the gan-nolc row.
        #[arg(long)]
        nolc_checkpoint: Option<PathBuf>,
        /// Comma-separated subset of fbp, gan-nolc, gan-lc.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render montages, view-sweep charts and optional flow overlays from an evaluation.
    Plot {
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated view counts for the sweep axis.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
        #[arg(long)]
        debug_flow: bool,
    },
}

fn quoted(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

/// Command flags as `--set` overrides, applied after the user's.
fn flag_overrides(cmd: &Command) -> CliResult<Vec<String>> {
    let mut s = Vec::new();
    match cmd {
        Command::Simulate { out, views, sigma, seed } => {
            if let Some(p) = out {
                s.push(format!("paths.out={}", quoted(p)));
            }
            if let Some(v) = views {
                s.push(format!("sim.n_views={v}"));
            }
            if let Some(v) = sigma {
                s.push(format!("sim.sigma={v:?}"));
            }
            if let Some(v) = seed {
                s.push(format!("sim.seed={v}"));
            }
        }
        Command::Train {
            data,
            out,
            flow,
            epochs,
            resume,
            checkpoint_every,
        } => {
            if let Some(p) = data {
                s.push(format!("paths.data={}", quoted(p)));
            }
            if let Some(p) = out {
                s.push(format!("paths.out={}", quoted(p)));
            }
            if let Some(f) = flow {
                s.push(format!("gan.flow_mode={}", toml::Value::String(f.clone())));
            }
            if let Some(e) = epochs {
                s.push(format!("gan.epochs={e}"));
            }
            if let Some(p) = resume {
                s.push(format!("train.resume={}", quoted(p)));
            }
            if let Some(n) = checkpoint_every {
                s.push(format!("train.checkpoint_every={n}"));
            }
        }
        Command::Eval {
            data,
            checkpoint,
            nolc_checkpoint,
            methods,
            out,
        } => {
            if let Some((first, rest)) = data.split_first() {
                s.push(format!("paths.data={}", quoted(first)));
                let rest: Vec<String> = rest.iter().map(|p| quoted(p)).collect();
                s.push(format!("paths.extra_data=[{}]", rest.join(",")));
            }
            if let Some(p) = checkpoint {
                s.push(format!("paths.checkpoint={}", quoted(p)));
            }
            if let Some(p) = nolc_checkpoint {
                s.push(format!("paths.nolc_checkpoint={}", quoted(p)));
            }
            if !methods.is_empty() {
                for m in methods {
                    config::Method::parse(m.trim()).map_err(Failure::config)?;
                }
                let list: Vec<String> = methods.iter().map(|m| toml::Value::String(m.trim().into()).to_string()).collect();
                s.push(format!("eval.methods=[{}]", list.join(",")));
            }
            if let Some(p) = out {
                s.push(format!("paths.out={}", quoted(p)));
            }
        }
        Command::Plot {
            eval,
            out,
            sweep,
            debug_flow,
        } => {
            if let Some(p) = eval {
                s.push(format!("paths.eval={}", quoted(p)));
            }
            if let Some(p) = out {
                s.push(format!("paths.out={}", quoted(p)));
            }
            if !sweep.is_empty() {
                let v: Vec<String> = sweep.iter().map(|n| n.to_string()).collect();
                s.push(format!("plot.sweep=[{}]", v.join(",")));
            }
            if *debug_flow {
                s.push("plot.debug_flow=true".into());
            }
        }
    }
    Ok(s)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    p.as_deref().ok_or_else(|| Failure::config(anyhow::anyhow!("{what} is not set")))
}

fn run(cli: Cli) -> CliResult<()> {
    let mut sets = cli.sets.clone();
    sets.extend(flag_overrides(&cli.command)?);
    let cfg = RunConfig::load(cli.config.as_deref(), std::env::vars(), &sets)?;
    match cli.command {
        Command::Simulate { .. } => {
            simulate::run(&cfg, required(&cfg.paths.out, "paths.out (--out)")?)?;
        }
        Command::Train { .. } => {
            let data = cfg.paths.data.as_deref().ok_or_else(|| Failure::missing("paths.data (--data) is not set"))?;
            let out = required(&cfg.paths.out, "paths.out (--out)")?;
            let t = train::run(&cfg, data, out)?;
            println!("trained {} epochs; log at {}", t.state.epoch, t.log.display());
        }
        Command::Eval { .. } => {
            let mut data: Vec<PathBuf> = cfg.paths.data.iter().cloned().collect();
            data.extend(cfg.paths.extra_data.iter().cloned());
            eval::run(&cfg, &data, required(&cfg.paths.out, "paths.out (--out)")?)?;
        }
        Command::Plot { .. } => {
            let dir = cfg.paths.eval.as_deref().ok_or_else(|| Failure::missing("paths.eval (--eval) is not set"))?;
            let p = plot::run(&cfg, dir, cfg.paths.out.clone())?;
            println!(
                "{} montages, {} sweep points, {} flow overlays",
                p.montages, p.sweep_points, p.flow_overlays
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.kind.code() as u8)
        }
    }
}
