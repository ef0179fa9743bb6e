use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use fovea_core::analysis::{Condition, Judgment, JudgmentTable, Response};
use fovea_core::diffusion::sha256_hex;
use fovea_core::foveation::FixationSequence;
use fovea_core::{Error, Result};

use crate::generator::{Generator, GeneratorInfo, StimulusSource};
use crate::schedule::{SessionConfig, TrialPlan};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordedResponse {
    Same,
    Different,
    NoResponse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub schema_version: u32,
    pub session: String,
    pub config: SessionConfig,
    pub schedule: Vec<TrialPlan>,
}

/// Outcome of the generation stage; everything needed to regenerate the probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub schema_version: u32,
    pub session: String,
    pub trial: usize,
    pub stimulus: usize,
    pub condition: Condition,
    pub fixation_target: usize,
    pub seed: u64,
    /// Fixations made by the viewer.
    pub fixations: FixationSequence,
    /// Fixations the probe was conditioned on (differs for random trials).
    pub generation_fixations: Option<FixationSequence>,
    pub generator: Option<GeneratorInfo>,
    pub generation_ms: f64,
    pub budget_exceeded: bool,
    pub aborted: Option<String>,
    pub image_sha256: Option<String>,
}

impl GenerationRecord {
    /// Usable for analysis: produced in time and not aborted.
    pub fn included(&self) -> bool {
        !self.budget_exceeded && self.aborted.is_none() && self.image_sha256.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(flatten)]
    pub generation: GenerationRecord,
    pub probe_ms: u64,
    pub response: RecordedResponse,
    pub rt_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum LogEvent {
    Session(SessionEvent),
    Generation(GenerationRecord),
    Response(TrialRecord),
}

/// Append-only JSON Lines log, one complete event per line.
pub struct TrialLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl TrialLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &LogEvent) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        let mut f = self.file.lock().map_err(|_| Error::Config("trial log lock poisoned".into()))?;
        f.write_all(&line)?;
        f.flush()?;
        f.sync_data()?;
        Ok(())
    }
}

/// Reads a log, skipping a torn final line left by a crash mid-write.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogEvent>> {
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => out.push(e),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => return Err(Error::Ingestion(format!("log line {}: {e}", i + 1))),
        }
    }
    Ok(out)
}

pub fn trial_records(events: &[LogEvent]) -> Vec<TrialRecord> {
    events
        .iter()
        .filter_map(|e| match e {
            LogEvent::Response(r) => Some(r.clone()),
            _ => None,
        })
        .collect()
}

/// Judgement table from completed, included trials with a same/different
/// answer. Pair ids are `session/trial`.
pub fn judgments(records: &[TrialRecord]) -> JudgmentTable {
    let rows = records
        .iter()
        .filter(|r| r.generation.included())
        .filter_map(|r| {
            let response = match r.response {
                RecordedResponse::Same => Response::Same,
                RecordedResponse::Different => Response::Different,
                RecordedResponse::NoResponse => return None,
            };
            Some(Judgment {
                pair_id: format!("{}/{}", r.generation.session, r.generation.trial),
                condition: r.generation.condition,
                response,
                response_time_ms: r.rt_ms.unwrap_or(f64::NAN),
            })
        })
        .collect();
    JudgmentTable::new(rows)
}

/// Rebuilds the probe PNG of a persisted trial.
pub fn regenerate(record: &GenerationRecord, stimuli: &dyn StimulusSource, generator: Option<&dyn Generator>) -> Result<Vec<u8>> {
    let stimulus = stimuli.image(record.stimulus)?;
    if record.condition == Condition::Original {
        return stimulus.to_png_bytes();
    }
    let generator = generator.ok_or_else(|| Error::Config("no generator to regenerate with".into()))?;
    if let (Some(saved), info) = (&record.generator, generator.info()) {
        if saved.checkpoint_sha256 != info.checkpoint_sha256 || saved.sampler != info.sampler || saved.blur_scale != info.blur_scale {
            return Err(Error::Config("generator differs from the one that produced the record".into()));
        }
    }
    let fixes = record.generation_fixations.as_ref().unwrap_or(&record.fixations);
    generator.generate(&stimulus, fixes, record.condition, record.seed)?.to_png_bytes()
}

pub fn png_sha256(png: &[u8]) -> String {
    sha256_hex(png)
}
