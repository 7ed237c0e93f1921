use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::WorkflowError;
use crate::engine::CodebookRef;
use crate::eval::{render3, Metric, MetricSet};
use crate::model::Codebook;

/// Minimum metric values a dimension must reach. Unset metrics are not
/// checked; there are no defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateThresholds {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl GateThresholds {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
        }
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        for metric in Metric::ALL {
            if let Some(t) = self.get(metric) {
                if !(0.0..=1.0).contains(&t) {
                    return Err(WorkflowError::InvalidThreshold { metric, value: t });
                }
            }
        }
        Ok(())
    }

    /// Checks one dimension. An undefined metric fails any threshold set on it.
    pub fn verdict(&self, dimension: &str, metrics: &MetricSet) -> GateVerdict {
        let failures = Metric::ALL
            .iter()
            .filter_map(|&metric| {
                let threshold = self.get(metric)?;
                let actual = metrics.get(metric).map(render_exact);
                let passed = actual.is_some_and(|a| a >= threshold);
                (!passed).then_some(GateFailure {
                    metric,
                    threshold,
                    actual,
                })
            })
            .collect::<Vec<_>>();
        GateVerdict {
            dimension: dimension.to_string(),
            passed: failures.is_empty(),
            failures,
        }
    }
}

fn render_exact(value: crate::eval::Rational) -> f64 {
    *value.numer() as f64 / *value.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateFailure {
    pub metric: Metric,
    pub threshold: f64,
    pub actual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub dimension: String,
    pub passed: bool,
    pub failures: Vec<GateFailure>,
}

impl std::fmt::Display for GateVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passed {
            return write!(f, "PASS {}", self.dimension);
        }
        write!(f, "FAIL {}:", self.dimension)?;
        for failure in &self.failures {
            match failure.actual {
                Some(a) => write!(f, " {} {:.3} < {:.3}", failure.metric, a, failure.threshold)?,
                None => write!(
                    f,
                    " {} undefined (needs {:.3})",
                    failure.metric, failure.threshold
                )?,
            }
        }
        write!(f, "; consider revising the codebook definition")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub run_id: String,
    pub metrics: BTreeMap<String, MetricSet>,
    pub verdicts: Vec<GateVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionEntry {
    pub parent_version: Option<u32>,
    pub content_hash: String,
    pub refinements: Vec<RefinementRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRecord {
    pub run_id: String,
    pub codebook_version: u32,
    pub metrics: BTreeMap<String, MetricSet>,
}

/// Codebook version tree with the refinement evaluations measured under each
/// version. Freezing happens exactly once, at holdout evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookLedger {
    pub codebook_id: String,
    pub dimension_keys: Vec<String>,
    pub versions: BTreeMap<u32, VersionEntry>,
    pub frozen: bool,
    pub holdout: Option<HoldoutRecord>,
}

impl CodebookLedger {
    pub fn new(root: &Codebook) -> Result<Self, WorkflowError> {
        root.validate()?;
        let mut ledger = CodebookLedger {
            codebook_id: root.codebook_id.clone(),
            dimension_keys: root.keys(),
            versions: BTreeMap::new(),
            frozen: false,
            holdout: None,
        };
        ledger.register_version(root)?;
        Ok(ledger)
    }

    pub fn latest_version(&self) -> u32 {
        self.versions.keys().next_back().copied().unwrap_or(0)
    }

    /// Adds a codebook version. Re-registering identical text is a no-op.
    pub fn register_version(&mut self, codebook: &Codebook) -> Result<(), WorkflowError> {
        codebook.validate()?;
        let content_hash = CodebookRef::of(codebook).content_hash;
        if let Some(existing) = self.versions.get(&codebook.version) {
            if existing.content_hash == content_hash {
                return Ok(());
            }
            return Err(WorkflowError::VersionConflict(format!(
                "version {} is already registered with different text; bump the version",
                codebook.version
            )));
        }
        if self.frozen {
            return Err(WorkflowError::AlreadyFrozen);
        }
        let conflict = |msg: String| Err(WorkflowError::VersionConflict(msg));
        if codebook.codebook_id != self.codebook_id {
            return conflict(format!(
                "codebook id {:?} does not match ledger {:?}",
                codebook.codebook_id, self.codebook_id
            ));
        }
        if codebook.keys() != self.dimension_keys {
            return conflict(format!(
                "dimension keys {:?} differ from {:?}; keys must stay stable across versions",
                codebook.keys(),
                self.dimension_keys
            ));
        }
        match codebook.parent_version {
            None if !self.versions.is_empty() => {
                return conflict("only the first version may omit parent_version".into())
            }
            Some(p) if !self.versions.contains_key(&p) => {
                return conflict(format!("parent version {p} is not registered"))
            }
            _ => {}
        }
        if codebook.version <= self.latest_version() {
            return conflict(format!(
                "version {} is not newer than {}",
                codebook.version,
                self.latest_version()
            ));
        }
        self.versions.insert(
            codebook.version,
            VersionEntry {
                parent_version: codebook.parent_version,
                content_hash,
                refinements: Vec::new(),
            },
        );
        Ok(())
    }

    /// Most recent refinement evaluation across all versions.
    pub fn last_refinement(&self) -> Option<(u32, &RefinementRecord)> {
        self.versions
            .iter()
            .rev()
            .find_map(|(v, e)| e.refinements.last().map(|r| (*v, r)))
    }

    pub fn refinement_count(&self) -> usize {
        self.versions.values().map(|e| e.refinements.len()).sum()
    }
}

/// Renders a metric map for console output, e.g. `f1=0.707`.
pub fn describe_metrics(metrics: &MetricSet) -> String {
    Metric::ALL
        .iter()
        .map(|m| match metrics.get(*m) {
            Some(v) => format!("{m}={:.3}", render3(v)),
            None => format!("{m}=undefined"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}
