use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Experimental condition of a judged probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    OwnFixation,
    Random,
    Original,
    Full,
    FovealOnly,
    PeripheralOnly,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition::OwnFixation,
        Condition::Random,
        Condition::Original,
        Condition::Full,
        Condition::FovealOnly,
        Condition::PeripheralOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::OwnFixation => "own-fixation",
            Condition::Random => "random",
            Condition::Original => "original",
            Condition::Full => "full",
            Condition::FovealOnly => "foveal-only",
            Condition::PeripheralOnly => "peripheral-only",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Response {
    Same,
    Different,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub pair_id: String,
    pub condition: Condition,
    pub response: Response,
    pub response_time_ms: f64,
}

/// Binary same/different judgments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgmentTable {
    pub rows: Vec<Judgment>,
}

impl JudgmentTable {
    pub fn new(rows: Vec<Judgment>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(same count, total)` within a condition.
    pub fn counts(&self, condition: Condition) -> (usize, usize) {
        self.rows.iter().filter(|r| r.condition == condition).fold((0, 0), |(s, n), r| {
            (s + usize::from(r.response == Response::Same), n + 1)
        })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for r in &self.rows {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Ingestion(format!("judgment row: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }
}

/// Fraction of "same" responses within `condition`.
pub fn metamer_rate(table: &JudgmentTable, condition: Condition) -> Result<f64> {
    let (s, n) = table.counts(condition);
    if n == 0 {
        return Err(Error::EmptyInput(format!("no judgments in condition {}", condition.as_str())));
    }
    Ok(s as f64 / n as f64)
}
