//! The `fovea` command-line driver.
//!
//! Each subcommand takes its settings from flags, then overlays a JSON
//! config file (`--config`) whose fields win over the flags. Every run writes
//! `manifest-<command>.json` next to its outputs.

pub mod commands;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use fovea_core::analysis::RegressionModel;
use fovea_core::experiments::{SimulateConfig, SweepAxis, SweepConfig};
use fovea_core::par::ExecMode;
use fovea_core::Error;

pub use commands::*;
pub use manifest::{FileEntry, Manifest};

#[derive(Debug, Parser)]
#[command(name = "fovea", version, about = "Fixation-conditioned scene generation at desk scale")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON file whose fields override the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for data-parallel stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the denoiser; `--checkpoint` resumes.
    Train {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// FID and embedding-distance curves along a conditioning axis.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// peripheral-scale, blur-level, foveal-tokens or all.
        #[arg(long, default_value = "all")]
        axis: String,
        #[arg(long)]
        n_images: Option<usize>,
        #[arg(long)]
        sampler_steps: Option<usize>,
    },
    /// Simulated same/different session feeding `analyze`.
    Simulate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        sampler_steps: Option<usize>,
    },
    /// Rates, binned curves, ablation tests and stepwise regression.
    Analyze {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        logistic: bool,
    },
    /// Run the experiment service.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// Start without a model; only original-image sessions are accepted.
        #[arg(long)]
        original_only: bool,
    },
}

/// Exit status for a failed run: 1 for problems with the inputs, 2 for
/// internal failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) => 2,
        _ => 1,
    }
}

/// Recursively overlays `over` onto `base`.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// `flags` overlaid with the config file, if any.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> fovea_core::Result<T> {
    let mut v = serde_json::to_value(flags)?;
    if let Some(path) = config {
        let text = std::fs::read(path)?;
        let over: Value = serde_json::from_slice(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut v, over);
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("invalid config: {e}")))
}

fn exec(g: &GlobalArgs) -> ExecMode {
    if g.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    }
}

pub fn run(cli: Cli) -> fovea_core::Result<()> {
    let g = cli.global.clone();
    match (g.sequential, g.workers) {
        (false, 0) => dispatch(&g, cli.command),
        (true, _) => fovea_core::par::with_workers(1, move || dispatch(&g, cli.command)),
        (false, n) => fovea_core::par::with_workers(n, move || dispatch(&g, cli.command)),
    }
}

fn dispatch(g: &GlobalArgs, command: Command) -> fovea_core::Result<()> {
    let cfg_path = g.config.as_deref();
    match command {
        Command::Train {
            checkpoint,
            steps,
            batch_size,
            checkpoint_every,
        } => {
            let mut run = TrainRun::default();
            run.train.exec = exec(g);
            if let Some(s) = g.seed {
                run.train.seed = s;
            }
            if let Some(s) = steps {
                run.train.steps = s;
            }
            if let Some(b) = batch_size {
                run.train.batch_size = b;
            }
            if let Some(k) = checkpoint_every {
                run.checkpoint_every = k;
            }
            let run = resolve(&run, cfg_path)?;
            let every = (run.train.steps / 20).max(1) as u64;
            let out = cmd_train(&run, checkpoint.as_deref(), &g.out, |step, loss| {
                if (step + 1) % every == 0 {
                    tracing::info!(step = step + 1, loss, "train");
                }
            })?;
            println!("{} sha256 {}", out.checkpoint.display(), out.sha256);
        }
        Command::Sweep {
            checkpoint,
            axis,
            n_images,
            sampler_steps,
        } => {
            let mut cfg = SweepConfig {
                exec: exec(g),
                ..Default::default()
            };
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            if let Some(n) = n_images {
                cfg.n_images = n;
            }
            if let Some(s) = sampler_steps {
                cfg.sampler.steps = s;
            }
            let axes = if axis == "all" {
                SweepAxis::ALL.to_vec()
            } else {
                vec![axis.parse()?]
            };
            cfg.axis = axes[0];
            let cfg = resolve(&cfg, cfg_path)?;
            let axes = if axes.len() == 1 { vec![cfg.axis] } else { axes };
            for (axis, points) in cmd_sweep(&checkpoint, &axes, &cfg, &g.out, |axis, p| {
                tracing::info!(axis = axis.as_str(), value = p.value, fid = p.fid, "sweep point");
            })? {
                for p in points {
                    println!("{} {} fid {:.5} distance {:.5}", axis.as_str(), p.value, p.fid, p.mean_embed_distance);
                }
            }
        }
        Command::Simulate {
            checkpoint,
            trials,
            tau,
            noise_sigma,
            sampler_steps,
        } => {
            let mut cfg = SimulateConfig {
                exec: exec(g),
                tau,
                ..Default::default()
            };
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            if let Some(n) = trials {
                cfg.n_trials = n;
            }
            if let Some(s) = noise_sigma {
                cfg.noise_sigma = s;
            }
            if let Some(s) = sampler_steps {
                cfg.sampler.steps = s;
            }
            let cfg = resolve(&cfg, cfg_path)?;
            let sim = cmd_simulate(&checkpoint, &cfg, &g.out)?;
            for c in &cfg.conditions {
                let (same, total) = sim.table.counts(*c);
                println!("{} {same}/{total} same", c.as_str());
            }
        }
        Command::Analyze {
            reports,
            judgments,
            bins,
            logistic,
        } => {
            let model = if logistic { RegressionModel::Logistic } else { RegressionModel::Linear };
            let a = cmd_analyze(&reports, &judgments, &g.out, bins, model)?;
            for (c, rate, n) in &a.rates {
                println!("{} {rate:.4} (n={n})", c.as_str());
            }
            if let Some(reg) = &a.regression {
                println!("regression r2 {:.4} selected {:?}", reg.r2, reg.selected.iter().map(|&i| &reg.names[i]).collect::<Vec<_>>());
            }
        }
        Command::Serve {
            checkpoint,
            addr,
            log_dir,
            original_only,
        } => {
            let mut cfg = ServeConfig::default();
            if let Some(a) = addr {
                cfg.addr = a;
            }
            cfg.log_dir = log_dir.unwrap_or_else(|| g.out.join("trial-logs"));
            if g.workers > 0 {
                cfg.workers = g.workers;
            }
            let cfg = resolve(&cfg, cfg_path)?;
            cmd_serve(&cfg, checkpoint.as_deref(), original_only)?;
        }
    }
    Ok(())
}
