use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::Serialize;

use super::{render3, EvalError, Metric, MetricSet, Rational};

/// Distribution of one metric across tasks. Percentiles interpolate linearly
/// between order statistics at rank `(n - 1) * q`, so the median of an even
/// count is the mean of the two middle values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Summary {
    pub minimum: Rational,
    pub p25: Rational,
    pub mean: Rational,
    pub median: Rational,
    pub p75: Rational,
    pub maximum: Rational,
    /// Number of defined values summarized.
    pub count: usize,
}

impl Summary {
    pub fn fields(&self) -> [Rational; 6] {
        [
            self.minimum,
            self.p25,
            self.mean,
            self.median,
            self.p75,
            self.maximum,
        ]
    }
}

impl Serialize for Summary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Summary", 7)?;
        st.serialize_field("minimum", &render3(self.minimum))?;
        st.serialize_field("p25", &render3(self.p25))?;
        st.serialize_field("mean", &render3(self.mean))?;
        st.serialize_field("median", &render3(self.median))?;
        st.serialize_field("p75", &render3(self.p75))?;
        st.serialize_field("maximum", &render3(self.maximum))?;
        st.serialize_field("count", &self.count)?;
        st.end()
    }
}

type Big = Ratio<BigInt>;

fn widen(r: Rational) -> Big {
    Ratio::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// Back to `i64` terms: exact when it fits, otherwise rounded to the nearest
/// multiple of 1e-15. Sums over many distinct denominators rarely fit.
fn narrow(r: Big) -> Rational {
    if let (Some(n), Some(d)) = (r.numer().to_i64(), r.denom().to_i64()) {
        return Ratio::new(n, d);
    }
    const SCALE: i64 = 1_000_000_000_000_000;
    let scaled = (r * BigInt::from(SCALE)).round().to_integer();
    Ratio::new(
        scaled.to_i64().expect("summary values lie in [0, 1]"),
        SCALE,
    )
}

fn percentile(sorted: &[Rational], q: Rational) -> Rational {
    let rank = Ratio::from_integer(sorted.len() as i64 - 1) * q;
    let lower = rank.floor();
    let frac = rank - lower;
    let i = *lower.numer() as usize;
    match sorted.get(i + 1) {
        Some(next) => narrow(widen(sorted[i]) + (widen(*next) - widen(sorted[i])) * widen(frac)),
        None => sorted[i],
    }
}

/// Summarizes a list of values; `None` if the list is empty.
pub fn summarize_values(values: &[Rational]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort();
    let n = sorted.len();
    let sum: Big = sorted.iter().map(|v| widen(*v)).sum();
    Some(Summary {
        minimum: sorted[0],
        p25: percentile(&sorted, Ratio::new(1, 4)),
        mean: narrow(sum / BigInt::from(n)),
        median: percentile(&sorted, Ratio::new(1, 2)),
        p75: percentile(&sorted, Ratio::new(3, 4)),
        maximum: sorted[n - 1],
        count: n,
    })
}

/// Cross-task distribution of each metric over the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SummaryDistribution {
    pub accuracy: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

impl SummaryDistribution {
    pub fn get(&self, metric: Metric) -> &Summary {
        match metric {
            Metric::Accuracy => &self.accuracy,
            Metric::Precision => &self.precision,
            Metric::Recall => &self.recall,
            Metric::F1 => &self.f1,
        }
    }
}

pub fn summarize(metric_sets: &[MetricSet]) -> Result<SummaryDistribution, EvalError> {
    let one = |metric: Metric| {
        let values: Vec<Rational> = metric_sets.iter().filter_map(|m| m.get(metric)).collect();
        summarize_values(&values).ok_or(EvalError::AllUndefined(metric.name()))
    };
    Ok(SummaryDistribution {
        accuracy: one(Metric::Accuracy)?,
        precision: one(Metric::Precision)?,
        recall: one(Metric::Recall)?,
        f1: one(Metric::F1)?,
    })
}

/// Plain-text table with one row per metric and three-decimal cells.
pub fn render_summary_table(dist: &SummaryDistribution) -> String {
    let mut out = format!(
        "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "metric", "min", "p25", "mean", "median", "p75", "max"
    );
    for metric in Metric::ALL {
        let s = dist.get(metric);
        out.push_str(&format!("{:<10}", metric.name()));
        for v in s.fields() {
            out.push_str(&format!(" {:>7.3}", render3(v)));
        }
        out.push('\n');
    }
    out
}
