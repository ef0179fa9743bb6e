use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use fovea_core::analysis::{JudgmentTable, RegressionModel};
use fovea_core::data::SyntheticScenes;
use fovea_core::diffusion::{Checkpoint, Model, ModelConfig, SamplerConfig, TrainConfig, Trainer};
use fovea_core::experiments::{
    analyze, run_sweep_with, simulate, write_sweep_csv, Analysis, Simulation, SimulateConfig, SweepAxis, SweepConfig,
    SweepPoint, ANALYSIS_BINS,
};
use fovea_core::metrics::{read_reports_csv, write_reports_csv, REPORT_FEATURES};
use fovea_core::{Error, Result};
use fovea_expsvc::{AppState, Generator, ModelGenerator, PngDirectory, StimulusSource, SyntheticStimuli};

use crate::manifest::Manifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Write an intermediate checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            checkpoint_every: 0,
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub sha256: String,
    pub losses: Vec<f64>,
    pub manifest: PathBuf,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";

/// Trains (or resumes) and writes the checkpoint, a per-step loss CSV and a
/// manifest into `out`.
pub fn cmd_train(run: &TrainRun, resume: Option<&Path>, out: &Path, mut progress: impl FnMut(u64, f64)) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    let t0 = Instant::now();
    let mut manifest = Manifest::new("train", run.train.seed, serde_json::to_value(run)?);
    let mut trainer = match resume {
        Some(path) => {
            manifest.input(path)?;
            let ck = Checkpoint::load(path)?;
            if ck.model.config != run.model {
                return Err(Error::Config("checkpoint model config differs from the run config".into()));
            }
            Trainer::resume(ck, run.train.clone())?
        }
        None => Trainer::new(Model::new(run.model.clone())?, run.train.clone())?,
    };
    let loss_path = out.join(LOSS_FILE);
    let mut loss_csv = fs::File::create(&loss_path)?;
    writeln!(loss_csv, "step,loss")?;
    let mut losses = Vec::with_capacity(run.train.steps);
    let mut done = 0;
    while done < run.train.steps {
        let chunk = match run.checkpoint_every {
            0 => run.train.steps - done,
            k => k.min(run.train.steps - done),
        };
        let mut io_err = None;
        trainer.run(chunk, |step, loss| {
            if let Err(e) = writeln!(loss_csv, "{step},{loss}") {
                io_err.get_or_insert(e);
            }
            losses.push(loss);
            progress(step, loss);
        })?;
        if let Some(e) = io_err {
            return Err(e.into());
        }
        done += chunk;
        if done < run.train.steps {
            trainer.checkpoint().save(out.join(format!("checkpoint-{}.bin", trainer.step)))?;
        }
    }
    loss_csv.flush()?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let sha256 = trainer.checkpoint().save(&checkpoint)?;
    manifest.output(&checkpoint)?;
    manifest.output(&loss_path)?;
    manifest.notes.push(format!("final step {}", trainer.step));
    manifest.elapsed_s = t0.elapsed().as_secs_f64();
    let manifest = manifest.write(out)?;
    Ok(TrainOutcome {
        checkpoint,
        sha256,
        losses,
        manifest,
    })
}

pub fn load_model(checkpoint: &Path) -> Result<Model> {
    Ok(Checkpoint::load(checkpoint)?.model)
}

/// Runs each requested axis and writes `sweep-<axis>.csv` per axis.
pub fn cmd_sweep(
    checkpoint: &Path,
    axes: &[SweepAxis],
    cfg: &SweepConfig,
    out: &Path,
    mut progress: impl FnMut(SweepAxis, &SweepPoint),
) -> Result<Vec<(SweepAxis, Vec<SweepPoint>)>> {
    fs::create_dir_all(out)?;
    let t0 = Instant::now();
    let mut manifest = Manifest::new(
        "sweep",
        cfg.seed,
        serde_json::json!({"axes": axes, "sweep": cfg}),
    );
    manifest.input(checkpoint)?;
    let model = load_model(checkpoint)?;
    let mut all = Vec::new();
    for &axis in axes {
        let c = SweepConfig {
            axis,
            values: if axis == cfg.axis { cfg.values.clone() } else { Vec::new() },
            ..cfg.clone()
        };
        let points = run_sweep_with(&model, &c, |_, p| progress(axis, p))?;
        let path = out.join(format!("sweep-{}.csv", axis.as_str()));
        write_sweep_csv(&path, axis, &points)?;
        manifest.output(&path)?;
        all.push((axis, points));
    }
    manifest.elapsed_s = t0.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(all)
}

pub const JUDGMENTS_FILE: &str = "judgments.jsonl";
pub const REPORTS_FILE: &str = "reports.csv";
pub const TRIALS_FILE: &str = "trials.jsonl";

/// Simulated session; writes judgements, feature reports and per-trial
/// provenance. The outputs feed [`cmd_analyze`] directly.
pub fn cmd_simulate(checkpoint: &Path, cfg: &SimulateConfig, out: &Path) -> Result<Simulation> {
    fs::create_dir_all(out)?;
    let t0 = Instant::now();
    let mut manifest = Manifest::new("simulate", cfg.seed, serde_json::to_value(cfg)?);
    manifest.input(checkpoint)?;
    let model = load_model(checkpoint)?;
    let sim = simulate(&model, cfg)?;
    let j = out.join(JUDGMENTS_FILE);
    sim.table.write_jsonl(&j)?;
    let r = out.join(REPORTS_FILE);
    write_reports_csv(&r, &sim.reports)?;
    let t = out.join(TRIALS_FILE);
    let mut f = fs::File::create(&t)?;
    for trial in &sim.trials {
        serde_json::to_writer(&mut f, trial)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    for p in [&j, &r, &t] {
        manifest.output(p)?;
    }
    manifest.notes.push(format!("observer tau {}", sim.tau));
    manifest.notes.push("depth fields use the luminance depth proxy".into());
    manifest.elapsed_s = t0.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(sim)
}

/// Rates, binned curves, ablation tests and stepwise regression over a
/// report CSV and a judgement JSONL.
pub fn cmd_analyze(reports: &Path, judgments: &Path, out: &Path, n_bins: Option<usize>, model: RegressionModel) -> Result<Analysis> {
    fs::create_dir_all(out)?;
    let t0 = Instant::now();
    let bins = n_bins.unwrap_or(ANALYSIS_BINS);
    let mut manifest = Manifest::new("analyze", 0, serde_json::json!({"bins": bins, "model": model}));
    manifest.input(reports)?;
    manifest.input(judgments)?;
    let table = JudgmentTable::read_jsonl(judgments)?;
    let analysis = analyze(&read_reports_csv(reports)?, &table, bins, model)?;

    let a = out.join("analysis.json");
    fs::write(&a, serde_json::to_vec_pretty(&analysis)?)?;
    manifest.output(&a)?;
    if let Some(reg) = &analysis.regression {
        let p = out.join("regression.json");
        fs::write(&p, serde_json::to_vec_pretty(reg)?)?;
        manifest.output(&p)?;
    }
    let rates = out.join("rates.csv");
    let mut f = fs::File::create(&rates)?;
    writeln!(f, "condition,rate,n")?;
    for (c, rate, n) in &analysis.rates {
        writeln!(f, "{},{rate},{n}", c.as_str())?;
    }
    f.flush()?;
    manifest.output(&rates)?;
    let curves = out.join("curves.csv");
    let mut f = fs::File::create(&curves)?;
    writeln!(f, "feature,bin,center,lo,hi,proportion_same,count,ci_low,ci_high,low_count")?;
    for curve in &analysis.curves {
        debug_assert!(REPORT_FEATURES.contains(&curve.feature.as_str()));
        for (i, b) in curve.bins.iter().enumerate() {
            writeln!(
                f,
                "{},{i},{},{},{},{},{},{},{},{}",
                curve.feature, b.center, b.lo, b.hi, b.proportion_same, b.count, b.ci_low, b.ci_high, b.low_count
            )?;
        }
    }
    f.flush()?;
    manifest.output(&curves)?;
    manifest.elapsed_s = t0.elapsed().as_secs_f64();
    manifest.write(out)?;
    Ok(analysis)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StimuliSpec {
    Synthetic { scenes: SyntheticScenes, offset: usize, count: usize },
    PngDir { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    pub addr: String,
    pub log_dir: PathBuf,
    pub workers: usize,
    pub stimuli: StimuliSpec,
    pub sampler: SamplerConfig,
    pub blur_scale: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            log_dir: PathBuf::from("trial-logs"),
            workers: 2,
            stimuli: StimuliSpec::Synthetic {
                scenes: SyntheticScenes::new(0, 200_000, 64),
                offset: 100_000,
                count: 300,
            },
            sampler: SamplerConfig::default(),
            blur_scale: fovea_core::diffusion::DEFAULT_TRIAL_BLUR,
        }
    }
}

/// Builds the service state. Without a checkpoint only original-image
/// sessions can be created, so `allow_without_model` must be set explicitly.
pub fn build_service(cfg: &ServeConfig, checkpoint: Option<&Path>, allow_without_model: bool) -> Result<AppState> {
    let stimuli: Arc<dyn StimulusSource> = match &cfg.stimuli {
        StimuliSpec::Synthetic { scenes, offset, count } => Arc::new(SyntheticStimuli {
            scenes: scenes.clone(),
            offset: *offset,
            count: *count,
        }),
        StimuliSpec::PngDir { path } => Arc::new(PngDirectory::open(path)?),
    };
    let generator: Option<Arc<dyn Generator>> = match checkpoint {
        Some(path) => {
            let sha = fovea_core::diffusion::file_sha256(path)?;
            let model = Arc::new(load_model(path)?);
            Some(Arc::new(ModelGenerator::new(model, cfg.sampler.clone(), Some(sha)).with_blur(cfg.blur_scale)))
        }
        None if allow_without_model => None,
        None => {
            return Err(Error::Config(
                "a checkpoint is required to serve generated-image conditions (pass --original-only to serve without one)".into(),
            ))
        }
    };
    Ok(AppState::new(stimuli, generator, &cfg.log_dir, cfg.workers)?)
}

pub fn cmd_serve(cfg: &ServeConfig, checkpoint: Option<&Path>, allow_without_model: bool) -> Result<()> {
    let state = build_service(cfg, checkpoint, allow_without_model)?;
    let addr: std::net::SocketAddr = cfg
        .addr
        .parse()
        .map_err(|e| Error::Config(format!("bad address '{}': {e}", cfg.addr)))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(fovea_expsvc::serve(state, addr))?;
    Ok(())
}
