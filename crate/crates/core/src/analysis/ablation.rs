use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::stats::two_proportion_z;
use super::table::{Condition, JudgmentTable};

pub const ABLATION_CONDITIONS: [Condition; 4] = [
    Condition::Original,
    Condition::Full,
    Condition::PeripheralOnly,
    Condition::FovealOnly,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRate {
    pub condition: Condition,
    pub same: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: Condition,
    pub b: Condition,
    /// Positive when `a` has the higher rate.
    pub z: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rates: Vec<ConditionRate>,
    pub tests: Vec<PairTest>,
}

impl AblationReport {
    pub fn rate(&self, condition: Condition) -> Option<&ConditionRate> {
        self.rates.iter().find(|r| r.condition == condition)
    }

    pub fn test(&self, a: Condition, b: Condition) -> Option<PairTest> {
        self.tests.iter().find_map(|t| {
            if t.a == a && t.b == b {
                Some(t.clone())
            } else if t.a == b && t.b == a {
                Some(PairTest { a, b, z: -t.z, p_value: t.p_value })
            } else {
                None
            }
        })
    }
}

/// Metamer rates for the ablation conditions with all pairwise two-proportion
/// z-tests.
pub fn ablation_report(table: &JudgmentTable) -> Result<AblationReport> {
    let mut rates = Vec::with_capacity(4);
    for c in ABLATION_CONDITIONS {
        let (same, total) = table.counts(c);
        if total == 0 {
            return Err(Error::Config(format!("ablation table has no '{}' rows", c.as_str())));
        }
        rates.push(ConditionRate { condition: c, same, total, rate: same as f64 / total as f64 });
    }
    let mut tests = Vec::new();
    for i in 0..rates.len() {
        for j in i + 1..rates.len() {
            let (a, b) = (&rates[i], &rates[j]);
            let (z, p_value) = two_proportion_z(a.same, a.total, b.same, b.total);
            tests.push(PairTest { a: a.condition, b: b.condition, z, p_value });
        }
    }
    Ok(AblationReport { rates, tests })
}
