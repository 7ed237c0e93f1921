//! Repeated-sampling annotation: `passes` completions per sample, vote
//! aggregation into modal labels with consistency scores, and checkpointed,
//! resumable corpus runs.

mod aggregate;
mod run;
mod store;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::eval::MetricSet;
use crate::model::{Codebook, DataError};
use crate::provider::{ProviderError, UsageRecord};

pub use aggregate::{aggregate, AggregateError, TiePolicy};
pub use run::{
    annotate_corpus, annotate_sample, resolve, PassOutcome, PassRecord, RunOptions, RunResults,
    SampleAnnotation,
};
pub use store::{
    load_run, read_aggregates_csv, write_aggregates_csv, write_votes_jsonl, RunPaths, RunRecord,
    VoteRow,
};

/// Fewest passes that still yield a meaningful consistency score.
pub const MIN_PASSES: u32 = 3;
pub const DEFAULT_PASSES: u32 = 7;
pub const DEFAULT_TEMPERATURE: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Completions requested per sample.
    pub passes: u32,
    /// Sampling temperature; must be positive so passes can disagree.
    pub temperature: f64,
    /// Dimensions with fewer valid votes are reported as unresolvable.
    pub min_valid_votes: u32,
    pub tie_policy: TiePolicy,
    pub concurrency_limit: usize,
    /// Seed for offline providers; not used by HTTP providers.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            passes: DEFAULT_PASSES,
            temperature: DEFAULT_TEMPERATURE,
            min_valid_votes: DEFAULT_PASSES.div_ceil(2),
            tie_policy: TiePolicy::Negative,
            concurrency_limit: 4,
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let invalid = |msg: String| Err(EngineError::InvalidConfig(msg));
        if self.passes < MIN_PASSES {
            return invalid(format!(
                "passes must be at least {MIN_PASSES}, got {}",
                self.passes
            ));
        }
        if !(self.temperature > 0.0 && self.temperature <= 1.0) {
            return invalid(format!(
                "temperature must be in (0, 1], got {}",
                self.temperature
            ));
        }
        if self.min_valid_votes == 0 || self.min_valid_votes > self.passes {
            return invalid(format!(
                "min_valid_votes must be in 1..={}, got {}",
                self.passes, self.min_valid_votes
            ));
        }
        if self.concurrency_limit == 0 {
            return invalid("concurrency_limit must be at least 1".into());
        }
        Ok(())
    }

    /// True when two configs produce the same results. Concurrency only
    /// affects scheduling, so it is ignored.
    pub fn result_equivalent(&self, other: &RunConfig) -> bool {
        self.passes == other.passes
            && self.temperature == other.temperature
            && self.min_valid_votes == other.min_valid_votes
            && self.tie_policy == other.tie_policy
            && self.seed == other.seed
    }
}

/// Identifies the exact codebook text a run used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookRef {
    pub codebook_id: String,
    pub version: u32,
    /// Hex SHA-256 of the canonical codebook rendering.
    pub content_hash: String,
}

impl CodebookRef {
    pub fn of(codebook: &Codebook) -> Self {
        use sha2::{Digest, Sha256};
        let text = crate::model::write_codebook(codebook);
        CodebookRef {
            codebook_id: codebook.codebook_id.clone(),
            version: codebook.version,
            content_hash: hex::encode(Sha256::digest(text.as_bytes())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// Holdout results attached to full-corpus runs so consumers see the
/// validation evidence next to the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEvidence {
    pub holdout_run_id: String,
    pub codebook_version: u32,
    pub metrics: BTreeMap<String, MetricSet>,
}

/// Persistent record of one annotation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub codebook: CodebookRef,
    pub config: RunConfig,
    pub provider: String,
    pub sample_count: usize,
    /// Hex SHA-256 over sample ids and texts, in order.
    pub sample_digest: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub usage: UsageRecord,
    /// Completed passes per sample.
    pub checkpoint: BTreeMap<String, u32>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationEvidence>,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("existing run manifest conflicts with this run: {0}")]
    ManifestConflict(String),
    #[error("run {run_id} is already complete")]
    AlreadyComplete { run_id: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt run file {path} line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("run interrupted after {completed_passes} of {total_passes} passes")]
    Interrupted {
        completed_passes: u64,
        total_passes: u64,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

impl EngineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EngineError::Io {
            path: path.into(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_protocol() {
        let config = RunConfig::default();
        assert_eq!(config.passes, 7);
        assert_eq!(config.temperature, 0.6);
        assert_eq!(config.tie_policy, TiePolicy::Negative);
        config.validate().unwrap();
    }

    #[test]
    fn floors_enforced() {
        let base = RunConfig::default();
        let two_passes = RunConfig {
            passes: 2,
            min_valid_votes: 1,
            ..base.clone()
        };
        assert!(two_passes.validate().is_err());
        let three = RunConfig {
            passes: 3,
            min_valid_votes: 2,
            ..base.clone()
        };
        three.validate().unwrap();
        for t in [0.0, -0.1, 1.5, f64::NAN] {
            let cfg = RunConfig {
                temperature: t,
                ..base.clone()
            };
            assert!(cfg.validate().is_err(), "temperature {t}");
        }
        let too_many = RunConfig {
            min_valid_votes: 8,
            ..base.clone()
        };
        assert!(too_many.validate().is_err());
    }
}
