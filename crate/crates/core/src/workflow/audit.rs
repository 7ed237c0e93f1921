use serde::Serialize;

use crate::eval::{evaluated_pairs, rational3, EvalError, Rational};
use crate::model::{Consistency, DimensionResult, GoldRecord, Label};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DimensionAgreement {
    pub dimension: String,
    pub pairs: u64,
    pub agreeing: u64,
    #[serde(serialize_with = "rational3::serialize")]
    pub agreement: Option<Rational>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Disagreement {
    pub sample_id: String,
    pub dimension: String,
    pub gold: Label,
    pub predicted: Label,
    pub consistency: Consistency,
}

/// Agreement between human gold labels and LLM labels. Disagreements are
/// listed with the most consistent LLM label first: those are the strongest
/// hints that a gold label deserves a second look.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub dimensions: Vec<DimensionAgreement>,
    pub disagreements: Vec<Disagreement>,
    pub unresolved: u64,
}

pub fn audit_human_labels(
    results: &[DimensionResult],
    gold: &[GoldRecord],
) -> Result<AuditReport, EvalError> {
    let set = evaluated_pairs(results, gold, None);
    if set.pairs.is_empty() {
        return Err(EvalError::NoOverlap("any dimension".into()));
    }
    let mut keys: Vec<&str> = Vec::new();
    for pair in &set.pairs {
        if !keys.contains(&pair.dimension_key.as_str()) {
            keys.push(&pair.dimension_key);
        }
    }
    let dimensions = keys
        .iter()
        .map(|key| {
            let (pairs, agreeing) = set
                .pairs
                .iter()
                .filter(|p| p.dimension_key == *key)
                .fold((0u64, 0u64), |(n, a), p| {
                    (n + 1, a + u64::from(p.correct()))
                });
            DimensionAgreement {
                dimension: key.to_string(),
                pairs,
                agreeing,
                agreement: crate::eval::ratio(agreeing, pairs),
            }
        })
        .collect();
    let mut disagreements: Vec<Disagreement> = set
        .pairs
        .iter()
        .filter(|p| !p.correct())
        .map(|p| Disagreement {
            sample_id: p.sample_id.clone(),
            dimension: p.dimension_key.clone(),
            gold: p.gold,
            predicted: p.predicted,
            consistency: p.consistency,
        })
        .collect();
    disagreements.sort_by(|a, b| {
        b.consistency
            .cmp(&a.consistency)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
            .then_with(|| a.dimension.cmp(&b.dimension))
    });
    Ok(AuditReport {
        dimensions,
        disagreements,
        unresolved: set.unresolved,
    })
}
