use num_rational::Ratio;
use serde::Serialize;

use super::{evaluated_pairs, rational3, ConfusionMatrix, EvalError, Rational};
use crate::model::{DimensionResult, GoldRecord};

/// Accuracy, TPR and TNR of the pairs in one consistency stratum. Empty
/// strata have every rate undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StratumMetrics {
    pub pairs: u64,
    pub confusion: ConfusionMatrix,
    #[serde(serialize_with = "rational3::serialize")]
    pub accuracy: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize")]
    pub tpr: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize")]
    pub tnr: Option<Rational>,
}

impl StratumMetrics {
    fn of(cm: ConfusionMatrix) -> Self {
        StratumMetrics {
            pairs: cm.total(),
            confusion: cm,
            accuracy: cm.accuracy(),
            tpr: cm.recall(),
            tnr: cm.specificity(),
        }
    }
}

/// Pairs split into full consistency (every valid vote agreed) and partial
/// consistency. Deltas are full minus partial, in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StratifiedMetrics {
    pub stratum_full: StratumMetrics,
    pub stratum_partial: StratumMetrics,
    #[serde(serialize_with = "rational3::serialize")]
    pub delta_accuracy_pp: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize")]
    pub delta_tpr_pp: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize")]
    pub delta_tnr_pp: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize")]
    pub share_full: Option<Rational>,
    pub unresolved: u64,
}

fn points(full: Option<Rational>, partial: Option<Rational>) -> Option<Rational> {
    Some((full? - partial?) * Ratio::from_integer(100))
}

/// Stratifies all gold-matched pairs, across dimensions, by consistency.
pub fn stratify(
    results: &[DimensionResult],
    gold: &[GoldRecord],
) -> Result<StratifiedMetrics, EvalError> {
    let set = evaluated_pairs(results, gold, None);
    if set.pairs.is_empty() {
        return Err(EvalError::NoOverlap("any dimension".into()));
    }
    let mut full = ConfusionMatrix::default();
    let mut partial = ConfusionMatrix::default();
    for pair in &set.pairs {
        let cm = if pair.consistency.is_full() {
            &mut full
        } else {
            &mut partial
        };
        cm.record(pair.gold, pair.predicted);
    }
    let full = StratumMetrics::of(full);
    let partial = StratumMetrics::of(partial);
    Ok(StratifiedMetrics {
        stratum_full: full,
        stratum_partial: partial,
        delta_accuracy_pp: points(full.accuracy, partial.accuracy),
        delta_tpr_pp: points(full.tpr, partial.tpr),
        delta_tnr_pp: points(full.tnr, partial.tnr),
        share_full: super::ratio(full.pairs, set.pairs.len() as u64),
        unresolved: set.unresolved,
    })
}
