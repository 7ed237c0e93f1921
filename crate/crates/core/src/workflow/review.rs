use serde::{Deserialize, Serialize};

use crate::model::{Consistency, DimensionResult, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewMode {
    EdgeCases,
    Positives,
    Both,
}

impl std::str::FromStr for ReviewMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edge_cases" => Ok(ReviewMode::EdgeCases),
            "positives" => Ok(ReviewMode::Positives),
            "both" => Ok(ReviewMode::Both),
            other => Err(format!("unknown review mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewReason {
    LowConsistency,
    Tie,
    Unresolvable,
    PositivePrediction,
}

impl ReviewReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ReviewReason::LowConsistency => "low_consistency",
            ReviewReason::Tie => "tie",
            ReviewReason::Unresolvable => "unresolvable",
            ReviewReason::PositivePrediction => "positive_prediction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub sample_id: String,
    pub dimension_key: String,
    pub reason: ReviewReason,
    /// Absent for unresolvable dimensions.
    pub label: Option<Label>,
    pub consistency: Option<Consistency>,
}

/// Entries sorted by ascending consistency, then sample id. Unresolvable
/// entries have no consistency and sort first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewQueue {
    pub entries: Vec<ReviewEntry>,
}

impl ReviewQueue {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV with columns `sample_id,dimension,reason,label,consistency`.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<(), csv::Error> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["sample_id", "dimension", "reason", "label", "consistency"])?;
        for e in &self.entries {
            writer.write_record([
                e.sample_id.as_str(),
                e.dimension_key.as_str(),
                e.reason.as_str(),
                &e.label.map(|l| l.to_string()).unwrap_or_default(),
                &e.consistency.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn edge_reason(result: &DimensionResult) -> Option<ReviewReason> {
    match result {
        DimensionResult::Unresolvable { .. } => Some(ReviewReason::Unresolvable),
        DimensionResult::Resolved(a) if a.tie => Some(ReviewReason::Tie),
        DimensionResult::Resolved(a) if !a.consistency.is_full() => {
            Some(ReviewReason::LowConsistency)
        }
        DimensionResult::Resolved(_) => None,
    }
}

fn positive_reason(result: &DimensionResult) -> Option<ReviewReason> {
    result
        .resolved()
        .filter(|a| a.label.is_positive())
        .map(|_| ReviewReason::PositivePrediction)
}

/// Selects annotations for human review. When an entry qualifies for several
/// reasons, the edge-case reason is reported.
pub fn build_review_queue(results: &[DimensionResult], mode: ReviewMode) -> ReviewQueue {
    let mut entries: Vec<ReviewEntry> = results
        .iter()
        .filter_map(|result| {
            let reason = match mode {
                ReviewMode::EdgeCases => edge_reason(result),
                ReviewMode::Positives => positive_reason(result),
                ReviewMode::Both => edge_reason(result).or_else(|| positive_reason(result)),
            }?;
            let resolved = result.resolved();
            Some(ReviewEntry {
                sample_id: result.sample_id().to_string(),
                dimension_key: result.dimension_key().to_string(),
                reason,
                label: resolved.map(|a| a.label),
                consistency: resolved.map(|a| a.consistency),
            })
        })
        .collect();
    entries.sort_by(|a, b| {
        a.consistency
            .cmp(&b.consistency)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
            .then_with(|| a.dimension_key.cmp(&b.dimension_key))
    });
    ReviewQueue { entries }
}
