//! The validation workflow: split gold labels, iterate the codebook on the
//! refinement split, evaluate once on the holdout split, then use the frozen
//! codebook for audits, review queues, training exports and full-corpus
//! labeling.

mod audit;
mod export;
mod ledger;
mod project;
mod review;
mod split;

use std::collections::BTreeSet;
use std::path::Path;

use crate::engine::{
    annotate_corpus, CodebookRef, EngineError, RunConfig, RunOptions, RunRecord, RunResults,
    RunStatus, ValidationEvidence,
};
use crate::eval::{
    evaluate_dimensions, metrics_by_dimension, DimensionEvaluation, EvalError, Metric,
};
use crate::model::{Codebook, DataError, GoldRecord, TextSample};
use crate::provider::CompletionProvider;

pub use audit::{audit_human_labels, AuditReport, DimensionAgreement, Disagreement};
pub use export::{export_training_data, ExportFormat, ExportSummary};
pub use ledger::{
    describe_metrics, CodebookLedger, GateFailure, GateThresholds, GateVerdict, HoldoutRecord,
    RefinementRecord, VersionEntry,
};
pub use project::ProjectLayout;
pub use review::{build_review_queue, ReviewEntry, ReviewMode, ReviewQueue, ReviewReason};
pub use split::{split, SplitSide, SplitSpec, DEFAULT_REFINEMENT_FRACTION};

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("need at least 2 gold records to split, found {0}")]
    TooFewGold(usize),
    #[error("split of {gold} gold records would put {refinement} in refinement; one side would be empty")]
    DegenerateSplit { gold: usize, refinement: usize },
    #[error("refinement fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("minimum consistency must be in [0, 1], got {0}")]
    InvalidMinConsistency(f64),
    #[error("threshold for {metric} must be in [0, 1], got {value}")]
    InvalidThreshold { metric: Metric, value: f64 },
    #[error("run contains {} holdout sample(s) (first: {}) while the ledger is unfrozen; holdout samples must not inform codebook refinement", .sample_ids.len(), .sample_ids[0])]
    HoldoutLeak { sample_ids: Vec<String> },
    #[error("the ledger is frozen: holdout evaluation already happened")]
    AlreadyFrozen,
    #[error("run used codebook version {used} but the latest version is {latest}")]
    StaleCodebook { used: u32, latest: u32 },
    #[error("no refinement evaluation recorded for codebook version {0}; evaluate on the refinement split first")]
    NoRefinement(u32),
    #[error(
        "codebook has not been validated on the holdout split; full-corpus labeling is refused"
    )]
    UnvalidatedCodebook,
    #[error("run does not cover {} required sample(s) (first: {})", .missing.len(), .missing[0])]
    IncompleteRun { missing: Vec<String> },
    #[error("run status is {0:?}, not complete")]
    RunNotComplete(RunStatus),
    #[error("codebook conflict: {0}")]
    VersionConflict(String),
    #[error("codebook version {0} is not registered in the ledger")]
    UnknownVersion(u32),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt workflow state {path}: {reason}")]
    Corrupt {
        path: std::path::PathBuf,
        reason: String,
    },
}

impl WorkflowError {
    /// True for violations of the validation order, as opposed to bad input.
    pub fn is_gate_violation(&self) -> bool {
        matches!(
            self,
            WorkflowError::HoldoutLeak { .. }
                | WorkflowError::AlreadyFrozen
                | WorkflowError::StaleCodebook { .. }
                | WorkflowError::NoRefinement(_)
                | WorkflowError::UnvalidatedCodebook
        )
    }
}

/// Per-dimension metrics and gate verdicts from one refinement evaluation.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RefinementReport {
    pub run_id: String,
    pub codebook_version: u32,
    pub evaluations: Vec<DimensionEvaluation>,
    pub verdicts: Vec<GateVerdict>,
    /// Earlier refinement evaluation this one can be compared with.
    pub previous_run_id: Option<String>,
}

impl RefinementReport {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HoldoutReport {
    pub run_id: String,
    pub codebook_version: u32,
    pub evaluations: Vec<DimensionEvaluation>,
    pub verdicts: Vec<GateVerdict>,
}

fn run_sample_ids(run: &RunRecord) -> BTreeSet<&str> {
    run.results.iter().map(|r| r.sample_id()).collect()
}

fn registered_version(ledger: &CodebookLedger, run: &RunRecord) -> Result<u32, WorkflowError> {
    let used = &run.manifest.codebook;
    let entry = ledger
        .versions
        .get(&used.version)
        .ok_or(WorkflowError::UnknownVersion(used.version))?;
    if used.codebook_id != ledger.codebook_id || entry.content_hash != used.content_hash {
        return Err(WorkflowError::VersionConflict(format!(
            "run {} used codebook text that differs from registered version {}",
            run.manifest.run_id, used.version
        )));
    }
    Ok(used.version)
}

fn require_complete(run: &RunRecord) -> Result<(), WorkflowError> {
    match run.manifest.status {
        RunStatus::Complete => Ok(()),
        other => Err(WorkflowError::RunNotComplete(other)),
    }
}

fn require_coverage(run: &RunRecord, required: &BTreeSet<&str>) -> Result<(), WorkflowError> {
    let present = run_sample_ids(run);
    let missing: Vec<String> = required
        .difference(&present)
        .map(|s| s.to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(WorkflowError::IncompleteRun { missing })
    }
}

/// Evaluates a run on the refinement split and records the result in the
/// ledger. Any holdout sample in the run is a hard error.
pub fn evaluate_refinement(
    ledger: &mut CodebookLedger,
    run: &RunRecord,
    gold: &[GoldRecord],
    split: &SplitSpec,
    thresholds: &GateThresholds,
) -> Result<RefinementReport, WorkflowError> {
    thresholds.validate()?;
    if ledger.frozen {
        return Err(WorkflowError::AlreadyFrozen);
    }
    let holdout = split.holdout_ids();
    let leaked: Vec<String> = run_sample_ids(run)
        .into_iter()
        .filter(|id| holdout.contains(id))
        .map(str::to_string)
        .collect();
    if !leaked.is_empty() {
        return Err(WorkflowError::HoldoutLeak { sample_ids: leaked });
    }
    require_complete(run)?;
    let version = registered_version(ledger, run)?;
    require_coverage(run, &split.refinement_ids())?;

    let refinement_gold = split.gold_for(gold, SplitSide::Refinement);
    let evaluations = evaluate_dimensions(&run.results, &refinement_gold, &ledger.dimension_keys)?;
    let verdicts: Vec<GateVerdict> = evaluations
        .iter()
        .map(|e| thresholds.verdict(&e.dimension, &e.metrics))
        .collect();
    let previous_run_id = ledger.last_refinement().map(|(_, r)| r.run_id.clone());
    ledger
        .versions
        .get_mut(&version)
        .expect("version checked above")
        .refinements
        .push(RefinementRecord {
            run_id: run.manifest.run_id.clone(),
            metrics: metrics_by_dimension(&evaluations),
            verdicts: verdicts.clone(),
        });
    Ok(RefinementReport {
        run_id: run.manifest.run_id.clone(),
        codebook_version: version,
        evaluations,
        verdicts,
        previous_run_id,
    })
}

/// Final evaluation on the holdout split. Freezes the ledger on success.
pub fn evaluate_holdout(
    ledger: &mut CodebookLedger,
    run: &RunRecord,
    gold: &[GoldRecord],
    split: &SplitSpec,
    thresholds: &GateThresholds,
) -> Result<HoldoutReport, WorkflowError> {
    thresholds.validate()?;
    if ledger.frozen {
        return Err(WorkflowError::AlreadyFrozen);
    }
    let used = run.manifest.codebook.version;
    let latest = ledger.latest_version();
    if used != latest {
        return Err(WorkflowError::StaleCodebook { used, latest });
    }
    let version = registered_version(ledger, run)?;
    if ledger.versions[&version].refinements.is_empty() {
        return Err(WorkflowError::NoRefinement(version));
    }
    require_complete(run)?;
    require_coverage(run, &split.holdout_ids())?;

    let holdout_gold = split.gold_for(gold, SplitSide::Holdout);
    let evaluations = evaluate_dimensions(&run.results, &holdout_gold, &ledger.dimension_keys)?;
    let verdicts = evaluations
        .iter()
        .map(|e| thresholds.verdict(&e.dimension, &e.metrics))
        .collect();
    ledger.frozen = true;
    ledger.holdout = Some(HoldoutRecord {
        run_id: run.manifest.run_id.clone(),
        codebook_version: version,
        metrics: metrics_by_dimension(&evaluations),
    });
    Ok(HoldoutReport {
        run_id: run.manifest.run_id.clone(),
        codebook_version: version,
        evaluations,
        verdicts,
    })
}

/// Checks that `codebook` is the version validated on the holdout split and
/// returns the evidence to attach to full-corpus runs.
pub fn validation_evidence(
    ledger: &CodebookLedger,
    codebook: &Codebook,
) -> Result<ValidationEvidence, WorkflowError> {
    let holdout = match (&ledger.holdout, ledger.frozen) {
        (Some(h), true) => h,
        _ => return Err(WorkflowError::UnvalidatedCodebook),
    };
    if codebook.version != holdout.codebook_version {
        return Err(WorkflowError::StaleCodebook {
            used: codebook.version,
            latest: holdout.codebook_version,
        });
    }
    let hash = CodebookRef::of(codebook).content_hash;
    if ledger
        .versions
        .get(&codebook.version)
        .map(|e| &e.content_hash)
        != Some(&hash)
    {
        return Err(WorkflowError::VersionConflict(format!(
            "codebook text for version {} changed after validation",
            codebook.version
        )));
    }
    Ok(ValidationEvidence {
        holdout_run_id: holdout.run_id.clone(),
        codebook_version: holdout.codebook_version,
        metrics: holdout.metrics.clone(),
    })
}

/// Labels the remaining corpus with the validated codebook. Refused until the
/// holdout evaluation has frozen the ledger.
#[allow(clippy::too_many_arguments)]
pub fn label_full_corpus(
    ledger: &CodebookLedger,
    samples: &[TextSample],
    codebook: &Codebook,
    config: &RunConfig,
    provider: &dyn CompletionProvider,
    run_dir: &Path,
    run_id: &str,
    options: &RunOptions,
) -> Result<RunResults, WorkflowError> {
    let evidence = validation_evidence(ledger, codebook)?;
    let options = RunOptions {
        validation: Some(evidence),
        ..options.clone()
    };
    Ok(annotate_corpus(
        samples, codebook, config, provider, run_dir, run_id, &options,
    )?)
}
