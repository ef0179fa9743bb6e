use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use fovea_core::analysis::Condition;
use fovea_core::foveation::{FixationSource, FIXATION_COUNTS};
use fovea_core::seeds;
use fovea_core::tensor::Mat;
use fovea_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Stimulus ids, each shown exactly once.
    pub stimuli: Vec<usize>,
    /// Conditions balanced across stimuli.
    pub conditions: Vec<Condition>,
    /// Fixation targets balanced within each condition.
    pub fixation_counts: Vec<usize>,
    pub probe_ms: u64,
    pub generation_budget_ms: u64,
    pub response_window_ms: u64,
    pub fixation_proxy: FixationSource,
    pub seed: u64,
    pub participant: Option<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            stimuli: Vec::new(),
            conditions: vec![Condition::OwnFixation, Condition::Random, Condition::Original],
            fixation_counts: FIXATION_COUNTS.to_vec(),
            probe_ms: 200,
            generation_budget_ms: 5000,
            response_window_ms: 10_000,
            fixation_proxy: FixationSource::ClickProxy,
            seed: 0,
            participant: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self, max_fixations: usize) -> Result<()> {
        if self.stimuli.is_empty() {
            return Err(Error::Config("session has no stimuli".into()));
        }
        let mut ids = self.stimuli.clone();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("stimulus ids must be unique".into()));
        }
        if self.conditions.is_empty() || self.fixation_counts.is_empty() {
            return Err(Error::Config("conditions and fixation counts must be non-empty".into()));
        }
        if let Some(&n) = self.fixation_counts.iter().find(|&&n| n == 0 || n > max_fixations) {
            return Err(Error::Config(format!("fixation count {n} outside 1..={max_fixations}")));
        }
        if self.probe_ms == 0 || self.generation_budget_ms == 0 || self.response_window_ms == 0 {
            return Err(Error::Config("timing parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn needs_generator(&self) -> bool {
        self.conditions.iter().any(|c| *c != Condition::Original)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub trial: usize,
    pub stimulus: usize,
    pub condition: Condition,
    pub fixation_target: usize,
    pub seed: u64,
}

/// Counterbalanced trial order: condition `i mod C` and fixation target
/// `(i div C) mod F` over a seeded shuffle of the stimuli, then a second
/// seeded shuffle of the trial order.
pub fn build_schedule(cfg: &SessionConfig) -> Vec<TrialPlan> {
    let mut rng = seeds::rng(cfg.seed, &[0x5c4e]);
    let mut stimuli = cfg.stimuli.clone();
    stimuli.shuffle(&mut rng);
    let nc = cfg.conditions.len();
    let mut plans: Vec<(usize, Condition, usize)> = stimuli
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, cfg.conditions[i % nc], cfg.fixation_counts[(i / nc) % cfg.fixation_counts.len()]))
        .collect();
    plans.shuffle(&mut rng);
    plans
        .into_iter()
        .enumerate()
        .map(|(trial, (stimulus, condition, fixation_target))| TrialPlan {
            trial,
            stimulus,
            condition,
            fixation_target,
            seed: seeds::derive(cfg.seed, &[0x7121, trial as u64]),
        })
        .collect()
}

/// Greedy k-center (farthest-point) selection on Euclidean embedding
/// distance. The walk starts at the point farthest from a seeded random row,
/// so the first pick lies on the hull of the set.
pub fn diverse_subset(embeddings: &Mat, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = embeddings.rows();
    if k > n {
        return Err(Error::Capacity {
            requested: k,
            capacity: n,
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let dist = |a: usize, b: usize| -> f64 {
        embeddings
            .row(a)
            .iter()
            .zip(embeddings.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let start = {
        use rand::Rng;
        seeds::rng(seed, &[0xd17e]).random_range(0..n)
    };
    let argmax = |d: &[f64]| {
        let mut best = 0;
        for i in 1..d.len() {
            if d[i] > d[best] {
                best = i;
            }
        }
        best
    };
    let first = argmax(&(0..n).map(|i| dist(start, i)).collect::<Vec<_>>());
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(first, i)).collect();
    while chosen.len() < k {
        for &c in &chosen {
            nearest[c] = f64::NEG_INFINITY;
        }
        let next = argmax(&nearest);
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            if d.is_finite() {
                *d = d.min(dist(next, i));
            }
        }
    }
    Ok(chosen)
}
