use std::collections::BTreeSet;

use serde::Serialize;

use super::{confusion, metrics, rational3, EvalError, Metric, MetricSet, Rational};
use crate::model::{DimensionResult, GoldRecord};

/// After minus before, per metric. `None` when either side is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MetricDelta {
    #[serde(serialize_with = "rational3::serialize")]
    pub accuracy: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize")]
    pub precision: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize")]
    pub recall: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize")]
    pub f1: Option<Rational>,
}

impl MetricDelta {
    pub fn get(&self, metric: Metric) -> Option<Rational> {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DimensionDelta {
    pub dimension: String,
    pub before: MetricSet,
    pub after: MetricSet,
    pub delta: MetricDelta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeltaReport {
    pub dimensions: Vec<DimensionDelta>,
}

impl DeltaReport {
    /// True when every defined difference is exactly zero.
    pub fn is_all_zero(&self) -> bool {
        self.dimensions.iter().all(|d| {
            Metric::ALL
                .iter()
                .filter_map(|m| d.delta.get(*m))
                .all(|v| v == Rational::from_integer(0))
        })
    }
}

fn gold_sample_ids<'a>(results: &'a [DimensionResult], gold: &[GoldRecord]) -> BTreeSet<&'a str> {
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.sample_id.as_str()).collect();
    results
        .iter()
        .map(|r| r.sample_id())
        .filter(|id| gold_ids.contains(id))
        .collect()
}

fn dimension_keys(results: &[DimensionResult]) -> BTreeSet<&str> {
    results.iter().map(|r| r.dimension_key()).collect()
}

/// Per-dimension metrics of two runs and their differences. Both runs must
/// cover the same gold-labeled samples and the same dimensions.
pub fn compare_runs(
    before: (&[DimensionResult], &[GoldRecord]),
    after: (&[DimensionResult], &[GoldRecord]),
) -> Result<DeltaReport, EvalError> {
    let keys_before = dimension_keys(before.0);
    let keys_after = dimension_keys(after.0);
    if keys_before != keys_after {
        return Err(EvalError::DimensionMismatch {
            before: keys_before.iter().map(|k| k.to_string()).collect(),
            after: keys_after.iter().map(|k| k.to_string()).collect(),
        });
    }
    let ids_before = gold_sample_ids(before.0, before.1);
    let ids_after = gold_sample_ids(after.0, after.1);
    if ids_before != ids_after {
        return Err(EvalError::SampleSetMismatch {
            only_before: ids_before.difference(&ids_after).count(),
            only_after: ids_after.difference(&ids_before).count(),
        });
    }
    let mut dimensions = Vec::new();
    for key in keys_before {
        let b = metrics(&confusion(before.0, before.1, key)?)?;
        let a = metrics(&confusion(after.0, after.1, key)?)?;
        let diff = |m: Metric| Some(a.get(m)? - b.get(m)?);
        dimensions.push(DimensionDelta {
            dimension: key.to_string(),
            before: b,
            after: a,
            delta: MetricDelta {
                accuracy: diff(Metric::Accuracy),
                precision: diff(Metric::Precision),
                recall: diff(Metric::Recall),
                f1: diff(Metric::F1),
            },
        });
    }
    Ok(DeltaReport { dimensions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AggregatedAnnotation, Consistency, Label};
    use num_rational::Ratio;

    fn run(pred: &[u8], key: &str) -> Vec<DimensionResult> {
        pred.iter()
            .enumerate()
            .map(|(i, p)| {
                DimensionResult::Resolved(AggregatedAnnotation {
                    sample_id: format!("s{i}"),
                    dimension_key: key.into(),
                    label: Label::from_bit(*p).unwrap(),
                    consistency: Consistency::full(),
                    tie: false,
                    valid_votes: 7,
                })
            })
            .collect()
    }

    fn gold(bits: &[u8]) -> Vec<GoldRecord> {
        bits.iter()
            .enumerate()
            .map(|(i, g)| GoldRecord {
                sample_id: format!("s{i}"),
                labels: [("d".to_string(), Label::from_bit(*g).unwrap())].into(),
                annotator_ids: vec![],
            })
            .collect()
    }

    #[test]
    fn self_comparison_is_zero() {
        let g = gold(&[1, 0, 1, 0, 1]);
        let r = run(&[1, 1, 0, 0, 1], "d");
        let report = compare_runs((&r, &g), (&r, &g)).unwrap();
        assert!(report.is_all_zero());
        assert_eq!(report.dimensions[0].delta.f1, Some(Ratio::from_integer(0)));
    }

    #[test]
    fn one_false_positive_fixed() {
        let mut gold_bits = vec![0u8; 100];
        gold_bits[..40].fill(1);
        let g = gold(&gold_bits);
        let mut before = gold_bits.clone();
        before[50] = 1;
        let report = compare_runs((&run(&before, "d"), &g), (&run(&gold_bits, "d"), &g)).unwrap();
        assert_eq!(
            report.dimensions[0].delta.accuracy,
            Some(Ratio::new(1, 100))
        );
    }

    #[test]
    fn mismatches_refused() {
        let g = gold(&[1, 0, 1]);
        let a = run(&[1, 0, 1], "d");
        let b = run(&[1, 0], "d");
        assert!(matches!(
            compare_runs((&a, &g), (&b, &g)),
            Err(EvalError::SampleSetMismatch {
                only_before: 1,
                only_after: 0
            })
        ));
        let c = run(&[1, 0, 1], "e");
        assert!(matches!(
            compare_runs((&a, &g), (&c, &g)),
            Err(EvalError::DimensionMismatch { .. })
        ));
    }
}
