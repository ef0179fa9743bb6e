//! Generation-quality sweeps and simulated same/different sessions.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    ablation_report, bin_proportions, median_threshold, observe_distance, stepwise_regression, AblationReport,
    Bin, Condition, Judgment, JudgmentTable, RegressionModel, RegressionResult, Response, DEFAULT_BINS,
};
use crate::conditioning::{Lambdas, ConditioningSet};
use crate::data::SyntheticScenes;
use crate::diffusion::{ddim_sample, GenerationCondition, Model, SamplerConfig};
use crate::error::{Error, Result};
use crate::foveation::{
    sample_random_fixations, FixationSequence, FixationSource, ImageBuffer, BLUR_SCALES, EXPERIMENT_BLUR_SCALE,
    FIXATION_COUNTS,
};
use crate::metrics::{
    build_reports, embed_distance, embedding, fid, fid_feature_matrix, FeatureReport, ImagePair, REPORT_FEATURES,
};
use crate::par::{self, ExecMode};
use crate::seeds;
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// λ for the peripheral stream, one central fixation, blur fixed.
    PeripheralScale,
    /// Peripheral blur scale with the foveal stream nulled.
    BlurLevel,
    /// Number of foveal tokens with the peripheral stream nulled.
    FovealTokens,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::PeripheralScale, SweepAxis::BlurLevel, SweepAxis::FovealTokens];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::PeripheralScale => "peripheral-scale",
            SweepAxis::BlurLevel => "blur-level",
            SweepAxis::FovealTokens => "foveal-tokens",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::PeripheralScale => vec![0.0, 0.25, 0.5, 0.75, 1.0],
            SweepAxis::BlurLevel => BLUR_SCALES.to_vec(),
            SweepAxis::FovealTokens => FIXATION_COUNTS.iter().map(|&n| n as f64).collect(),
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// Axis values; empty means [`SweepAxis::default_values`].
    pub values: Vec<f64>,
    pub n_images: usize,
    /// Index of the first stimulus in the dataset.
    pub first_image: usize,
    pub dataset: SyntheticScenes,
    pub sampler: SamplerConfig,
    /// Blur used when the axis is not the blur level.
    pub blur_scale: f64,
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::PeripheralScale,
            values: Vec::new(),
            n_images: 200,
            first_image: 100_000,
            dataset: SyntheticScenes::new(0, 200_000, 64),
            sampler: SamplerConfig::default(),
            blur_scale: EXPERIMENT_BLUR_SCALE,
            seed: 7,
            exec: ExecMode::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub fid: f64,
    pub mean_embed_distance: f64,
    pub n: usize,
}

fn central_fixation(side: usize) -> Result<FixationSequence> {
    let c = side as f64 / 2.0;
    FixationSequence::from_coords(&[(c, c)], FixationSource::ClickProxy)
}

/// The first `n` of a fixed draw of ten random fixations, so token sets are
/// nested across counts.
fn nested_fixations(n: usize, side: usize, patch: usize, seed: u64) -> Result<FixationSequence> {
    let all = sample_random_fixations(FIXATION_COUNTS[FIXATION_COUNTS.len() - 1].max(n), side, patch, seed)?;
    FixationSequence::new(all.points[..n].to_vec(), FixationSource::Random)
}

fn sweep_conditioning(model: &Model, img: &ImageBuffer, cfg: &SweepConfig, value: f64, seed: u64) -> Result<ConditioningSet> {
    let side = model.image_side();
    let lambdas = cfg.sampler.lambdas;
    match cfg.axis {
        SweepAxis::PeripheralScale => {
            let fov = model.foveal_grid(img, &central_fixation(side)?)?;
            let per = model.peripheral_grid(img, cfg.blur_scale)?;
            let l = Lambdas { foveal: lambdas.foveal, peripheral: value };
            model.conditioning(Some(&fov), Some(&per), l)
        }
        SweepAxis::BlurLevel => {
            let per = model.peripheral_grid(img, value)?;
            model.conditioning(None, Some(&per), lambdas)
        }
        SweepAxis::FovealTokens => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("foveal token count must be a positive integer, got {value}")));
            }
            let fixes = nested_fixations(value as usize, side, model.config.encoder.patch_size, seed)?;
            let fov = model.foveal_grid(img, &fixes)?;
            model.conditioning(Some(&fov), None, lambdas)
        }
    }
}

/// Generates one image per stimulus for every axis value and scores the set
/// against the stimuli themselves. Stimulus `i` uses the same sampler noise at
/// every axis value.
pub fn run_sweep(model: &Model, cfg: &SweepConfig) -> Result<Vec<SweepPoint>> {
    run_sweep_with(model, cfg, |_, _| {})
}

/// [`run_sweep`] with a callback after each finished axis value.
pub fn run_sweep_with(
    model: &Model,
    cfg: &SweepConfig,
    mut on_point: impl FnMut(usize, &SweepPoint),
) -> Result<Vec<SweepPoint>> {
    if cfg.n_images < 2 {
        return Err(Error::Config("a sweep needs at least two images".into()));
    }
    if cfg.first_image + cfg.n_images > cfg.dataset.len() {
        return Err(Error::Config("sweep images exceed the dataset".into()));
    }
    cfg.sampler.validate(model.schedule.timesteps)?;
    let values = if cfg.values.is_empty() { cfg.axis.default_values() } else { cfg.values.clone() };
    let sources: Vec<ImageBuffer> = (0..cfg.n_images).map(|i| cfg.dataset.image(cfg.first_image + i)).collect();
    let reference = fid_feature_matrix(&sources);
    let source_embeds: Vec<Vec<f64>> = sources.iter().map(embedding).collect();
    let mut out = Vec::with_capacity(values.len());
    for (k, &value) in values.iter().enumerate() {
        let generated = par::map_range(cfg.exec, cfg.n_images, |i| -> Result<ImageBuffer> {
            let fix_seed = seeds::derive(cfg.seed, &[0xf1c5, i as u64]);
            let conds = sweep_conditioning(model, &sources[i], cfg, value, fix_seed)?;
            let sc = SamplerConfig { seed: seeds::derive(cfg.seed, &[0x5a3e, i as u64]), ..cfg.sampler.clone() };
            ddim_sample(model, &conds, &sc)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut dist = 0.0;
        for (g, e) in generated.iter().zip(&source_embeds) {
            dist += embed_distance(&embedding(g), e)?;
        }
        let point = SweepPoint {
            value,
            fid: fid(&fid_feature_matrix(&generated), &reference)?,
            mean_embed_distance: dist / cfg.n_images as f64,
            n: cfg.n_images,
        };
        on_point(k, &point);
        out.push(point);
    }
    Ok(out)
}

pub fn write_sweep_csv(path: impl AsRef<std::path::Path>, axis: SweepAxis, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    w.write_record([axis.as_str(), "fid", "mean_embed_distance", "n"]).map_err(|e| Error::Io(e.into()))?;
    for p in points {
        w.write_record([p.value.to_string(), p.fid.to_string(), p.mean_embed_distance.to_string(), p.n.to_string()])
            .map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub n_trials: usize,
    pub conditions: Vec<Condition>,
    /// Fixation counts a simulated viewer is assigned, cycled per stimulus.
    pub fixation_counts: Vec<usize>,
    pub first_image: usize,
    pub dataset: SyntheticScenes,
    pub sampler: SamplerConfig,
    pub blur_scale: f64,
    /// Observer threshold; `None` uses the median distance over generated
    /// trials.
    pub tau: Option<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_trials: 500,
            conditions: crate::analysis::ABLATION_CONDITIONS.to_vec(),
            fixation_counts: FIXATION_COUNTS.to_vec(),
            first_image: 150_000,
            dataset: SyntheticScenes::new(0, 200_000, 64),
            sampler: SamplerConfig::default(),
            blur_scale: EXPERIMENT_BLUR_SCALE,
            tau: None,
            noise_sigma: 0.02,
            seed: 11,
            exec: ExecMode::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTrial {
    pub pair_id: String,
    pub stimulus: usize,
    pub condition: Condition,
    pub fixations: Option<FixationSequence>,
    pub sampler_seed: u64,
    pub distance: f64,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub table: JudgmentTable,
    pub reports: Vec<FeatureReport>,
    pub trials: Vec<SimulatedTrial>,
    pub tau: f64,
}

/// Runs `n_trials` trials, conditions interleaved per stimulus, and answers
/// each with a threshold observer on embedding distance.
pub fn simulate(model: &Model, cfg: &SimulateConfig) -> Result<Simulation> {
    if cfg.n_trials == 0 || cfg.conditions.is_empty() || cfg.fixation_counts.is_empty() {
        return Err(Error::Config("simulation needs trials, conditions and fixation counts".into()));
    }
    cfg.sampler.validate(model.schedule.timesteps)?;
    let side = model.image_side();
    let patch = model.config.encoder.patch_size;
    let nc = cfg.conditions.len();
    let n_stimuli = cfg.n_trials.div_ceil(nc);
    if cfg.first_image + n_stimuli > cfg.dataset.len() {
        return Err(Error::Config("simulation stimuli exceed the dataset".into()));
    }
    let results = par::map_range(cfg.exec, cfg.n_trials, |k| -> Result<(SimulatedTrial, ImagePair)> {
        let s = k / nc;
        let condition = cfg.conditions[k % nc];
        let stimulus = cfg.first_image + s;
        let img = cfg.dataset.image(stimulus);
        let count = cfg.fixation_counts[s % cfg.fixation_counts.len()];
        let own = sample_random_fixations(count, side, patch, seeds::derive(cfg.seed, &[0x0f1c, s as u64]))?;
        let own = FixationSequence { source: FixationSource::Human, ..own };
        let sampler_seed = seeds::derive(cfg.seed, &[0x5a3e, k as u64]);
        let sc = SamplerConfig { seed: sampler_seed, ..cfg.sampler.clone() };
        let (generated, fixations) = match condition {
            Condition::Original => (img.clone(), None),
            Condition::Random => {
                let fixes = sample_random_fixations(count, side, patch, seeds::derive(cfg.seed, &[0x7a4d, k as u64]))?;
                let g = crate::diffusion::generate_from_trial(model, &img, &fixes, cfg.blur_scale, GenerationCondition::Full, &sc)?;
                (g.image, Some(fixes))
            }
            c => {
                let gc = match c {
                    Condition::FovealOnly => GenerationCondition::FovealOnly,
                    Condition::PeripheralOnly => GenerationCondition::PeripheralOnly,
                    _ => GenerationCondition::Full,
                };
                let g = crate::diffusion::generate_from_trial(model, &img, &own, cfg.blur_scale, gc, &sc)?;
                (g.image, Some(own))
            }
        };
        let pair_id = format!("t{k:05}");
        let distance = embed_distance(&embedding(&img), &embedding(&generated))?;
        Ok((
            SimulatedTrial { pair_id: pair_id.clone(), stimulus, condition, fixations, sampler_seed, distance },
            ImagePair { pair_id, original: img, generated },
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (trials, pairs): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let tau = match cfg.tau {
        Some(t) => t,
        None => {
            let generated: Vec<f64> =
                trials.iter().filter(|t| t.condition != Condition::Original).map(|t| t.distance).collect();
            if generated.is_empty() { 0.5 } else { median_threshold(&generated)? }
        }
    };
    let mut rng = seeds::rng(cfg.seed, &[0x0b5e]);
    let mut rows = Vec::with_capacity(trials.len());
    for t in &trials {
        let response = observe_distance(t.distance, tau, cfg.noise_sigma, &mut rng)?;
        rows.push(Judgment {
            pair_id: t.pair_id.clone(),
            condition: t.condition,
            response,
            response_time_ms: 600.0 + 400.0 * t.distance.min(1.0),
        });
    }
    let reports = build_reports(&pairs, &model.encoder, cfg.exec)?;
    Ok(Simulation { table: JudgmentTable::new(rows), reports, trials, tau })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureCurve {
    pub feature: String,
    pub bins: Vec<Bin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub rates: Vec<(Condition, f64, usize)>,
    pub ablation: Option<AblationReport>,
    pub curves: Vec<FeatureCurve>,
    pub regression: Option<RegressionResult>,
}

/// Joins judgements to reports by pair id and computes per-condition rates,
/// binned proportion-same curves for every feature, the ablation report when
/// its conditions are present, and a stepwise regression of the responses on
/// all features.
pub fn analyze(reports: &[FeatureReport], table: &JudgmentTable, n_bins: usize, model: RegressionModel) -> Result<Analysis> {
    let by_id: std::collections::HashMap<&str, &FeatureReport> =
        reports.iter().map(|r| (r.pair_id.as_str(), r)).collect();
    if by_id.len() != reports.len() {
        return Err(Error::Ingestion("duplicate pair ids in feature reports".into()));
    }
    let mut rows = Vec::new();
    let mut same = Vec::new();
    for j in &table.rows {
        let r = by_id
            .get(j.pair_id.as_str())
            .ok_or_else(|| Error::Ingestion(format!("judgement '{}' has no feature report", j.pair_id)))?;
        rows.push(r.values().to_vec());
        same.push(j.response == Response::Same);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("no judgements".into()));
    }
    let rates = Condition::ALL
        .into_iter()
        .filter_map(|c| {
            let (s, n) = table.counts(c);
            (n > 0).then(|| (c, s as f64 / n as f64, n))
        })
        .collect();
    let ablation = match ablation_report(table) {
        Ok(a) => Some(a),
        Err(Error::Config(_)) => None,
        Err(e) => return Err(e),
    };
    let bins = n_bins.min(rows.len() / 2).max(1);
    let mut curves = Vec::new();
    for (f, name) in REPORT_FEATURES.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        if rows.len() >= 2 {
            curves.push(FeatureCurve { feature: name.to_string(), bins: bin_proportions(&col, &same, bins)? });
        }
    }
    let x = Mat::from_rows(&rows);
    let y: Vec<f64> = same.iter().map(|&s| f64::from(u8::from(s))).collect();
    let names: Vec<String> = REPORT_FEATURES.iter().map(|s| s.to_string()).collect();
    let regression = if rows.len() > REPORT_FEATURES.len() + 2 {
        Some(stepwise_regression(&x, &y, &names, 0.05, model)?)
    } else {
        None
    };
    Ok(Analysis { rates, ablation, curves, regression })
}

/// Default bin count for [`analyze`].
pub const ANALYSIS_BINS: usize = DEFAULT_BINS;
