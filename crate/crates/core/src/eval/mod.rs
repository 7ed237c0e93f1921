//! Validation of aggregated labels against gold labels.
//!
//! Counts and metrics are exact rationals; values are rounded to three
//! decimals only when rendered into reports.

mod compare;
mod stratify;
mod summary;

use std::collections::{BTreeMap, HashMap};

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{Consistency, DimensionResult, GoldRecord, Label};

pub use compare::{compare_runs, DeltaReport, DimensionDelta, MetricDelta};
pub use stratify::{stratify, StratifiedMetrics, StratumMetrics};
pub use summary::{
    render_summary_table, summarize, summarize_values, Summary, SummaryDistribution,
};

pub type Rational = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no sample has both a gold label and a resolved annotation for {0:?}")]
    NoOverlap(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("metric {0} is undefined for every input")]
    AllUndefined(&'static str),
    #[error("runs were evaluated on different sample sets ({only_before} only before, {only_after} only after)")]
    SampleSetMismatch {
        only_before: usize,
        only_after: usize,
    },
    #[error("runs cover different dimensions: {before:?} vs {after:?}")]
    DimensionMismatch {
        before: Vec<String>,
        after: Vec<String>,
    },
}

/// Rounds to three decimals for reports.
pub fn render3(value: Rational) -> f64 {
    // i128 so that `numer * 1000` cannot overflow.
    let wide = Ratio::new(
        i128::from(*value.numer()) * 1000,
        i128::from(*value.denom()),
    );
    *wide.round().numer() as f64 / 1000.0
}

pub(crate) fn ratio(numerator: u64, denominator: u64) -> Option<Rational> {
    (denominator > 0).then(|| Ratio::new(numerator as i64, denominator as i64))
}

pub(crate) mod rational3 {
    use super::{render3, Rational};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(value: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => s.serialize_f64(render3(*v)),
            None => s.serialize_none(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, gold: Label, predicted: Label) {
        match (gold, predicted) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Negative, Label::Positive) => self.fp += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Positive, Label::Negative) => self.fn_ += 1,
        }
    }

    pub fn accuracy(&self) -> Option<Rational> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Option<Rational> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Recall, also the true positive rate.
    pub fn recall(&self) -> Option<Rational> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// True negative rate.
    pub fn specificity(&self) -> Option<Rational> {
        ratio(self.tn, self.tn + self.fp)
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            tn: self.tn + rhs.tn,
            fn_: self.fn_ + rhs.fn_,
        }
    }
}

/// Accuracy, precision, recall and F1 of one confusion matrix. A metric is
/// `None` exactly when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSet {
    pub accuracy: Option<Rational>,
    pub precision: Option<Rational>,
    pub recall: Option<Rational>,
    pub f1: Option<Rational>,
    pub support_positive: u64,
    pub support_negative: u64,
    pub confusion: ConfusionMatrix,
}

impl MetricSet {
    pub fn get(&self, metric: Metric) -> Option<Rational> {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Accuracy,
        Metric::Precision,
        Metric::Recall,
        Metric::F1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Serialize, Deserialize)]
struct MetricSetRepr {
    #[serde(serialize_with = "rational3::serialize", skip_deserializing)]
    accuracy: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize", skip_deserializing)]
    precision: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize", skip_deserializing)]
    recall: Option<Rational>,
    #[serde(serialize_with = "rational3::serialize", skip_deserializing)]
    f1: Option<Rational>,
    support_positive: u64,
    support_negative: u64,
    #[serde(flatten)]
    confusion: ConfusionMatrix,
}

// Serialized metrics are rounded; the exact values are rebuilt from the
// counts on load.
impl Serialize for MetricSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        MetricSetRepr {
            accuracy: self.accuracy,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            support_positive: self.support_positive,
            support_negative: self.support_negative,
            confusion: self.confusion,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MetricSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = MetricSetRepr::deserialize(deserializer)?;
        metrics(&repr.confusion).map_err(serde::de::Error::custom)
    }
}

/// Computes the metric set of a confusion matrix.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricSet, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let precision = cm.precision();
    let recall = cm.recall();
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > Ratio::from_integer(0) => {
            Some(Ratio::from_integer(2) * p * r / (p + r))
        }
        _ => None,
    };
    Ok(MetricSet {
        accuracy: cm.accuracy(),
        precision,
        recall,
        f1,
        support_positive: cm.tp + cm.fn_,
        support_negative: cm.tn + cm.fp,
        confusion: *cm,
    })
}

/// One resolved annotation matched with its gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluatedPair {
    pub sample_id: String,
    pub dimension_key: String,
    pub gold: Label,
    pub predicted: Label,
    pub consistency: Consistency,
}

impl EvaluatedPair {
    pub fn correct(&self) -> bool {
        self.gold == self.predicted
    }
}

/// Matched pairs plus the number of gold-labeled annotations that were
/// unresolvable and therefore left out.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<EvaluatedPair>,
    pub unresolved: u64,
}

/// Matches annotations to gold labels, optionally for one dimension only.
/// Annotations without a gold label are skipped.
pub fn evaluated_pairs(
    results: &[DimensionResult],
    gold: &[GoldRecord],
    dimension: Option<&str>,
) -> PairSet {
    let by_id: HashMap<&str, &GoldRecord> =
        gold.iter().map(|g| (g.sample_id.as_str(), g)).collect();
    let mut set = PairSet::default();
    for result in results {
        if dimension.is_some_and(|d| d != result.dimension_key()) {
            continue;
        }
        let Some(gold_label) = by_id
            .get(result.sample_id())
            .and_then(|g| g.labels.get(result.dimension_key()))
        else {
            continue;
        };
        match result.resolved() {
            Some(a) => set.pairs.push(EvaluatedPair {
                sample_id: a.sample_id.clone(),
                dimension_key: a.dimension_key.clone(),
                gold: *gold_label,
                predicted: a.label,
                consistency: a.consistency,
            }),
            None => set.unresolved += 1,
        }
    }
    set
}

/// Confusion matrix of one dimension over samples present in both inputs.
/// Positive is the dimension's positive label.
pub fn confusion(
    results: &[DimensionResult],
    gold: &[GoldRecord],
    dimension_key: &str,
) -> Result<ConfusionMatrix, EvalError> {
    let set = evaluated_pairs(results, gold, Some(dimension_key));
    if set.pairs.is_empty() {
        return Err(EvalError::NoOverlap(dimension_key.to_string()));
    }
    let mut cm = ConfusionMatrix::default();
    for pair in &set.pairs {
        cm.record(pair.gold, pair.predicted);
    }
    Ok(cm)
}

/// Per-dimension evaluation as written to metrics reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEvaluation {
    pub dimension: String,
    pub metrics: MetricSet,
    pub unresolved: u64,
}

/// Evaluates every listed dimension. Fails if any dimension has no overlap.
pub fn evaluate_dimensions(
    results: &[DimensionResult],
    gold: &[GoldRecord],
    keys: &[String],
) -> Result<Vec<DimensionEvaluation>, EvalError> {
    keys.iter()
        .map(|key| {
            let set = evaluated_pairs(results, gold, Some(key));
            let cm = confusion(results, gold, key)?;
            Ok(DimensionEvaluation {
                dimension: key.clone(),
                metrics: metrics(&cm)?,
                unresolved: set.unresolved,
            })
        })
        .collect()
}

/// Per-dimension metrics keyed by dimension.
pub fn metrics_by_dimension(evaluations: &[DimensionEvaluation]) -> BTreeMap<String, MetricSet> {
    evaluations
        .iter()
        .map(|e| (e.dimension.clone(), e.metrics))
        .collect()
}

fn cell(value: Option<Rational>) -> String {
    value.map_or_else(|| "undefined".to_string(), |v| format!("{:.3}", render3(v)))
}

/// CSV with columns `dimension,accuracy,precision,recall,f1,tp,fp,tn,fn`.
/// Undefined metrics are written as `undefined`.
pub fn write_metrics_csv(
    evaluations: &[DimensionEvaluation],
    out: &mut impl std::io::Write,
) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record([
        "dimension",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "tp",
        "fp",
        "tn",
        "fn",
    ])?;
    for e in evaluations {
        let m = &e.metrics;
        let c = &m.confusion;
        writer.write_record([
            e.dimension.clone(),
            cell(m.accuracy),
            cell(m.precision),
            cell(m.recall),
            cell(m.f1),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
