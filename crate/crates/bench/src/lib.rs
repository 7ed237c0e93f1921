//! Fixtures shared by the benchmarks in `benches/`.

use annogate::eval::{metrics, ConfusionMatrix, MetricSet};
use annogate::model::default_output_contract;
use annogate::{Codebook, Dimension, GoldRecord, Label, Vote, VoteSet};

pub fn codebook(keys: &[&str]) -> Codebook {
    Codebook {
        codebook_id: "bench".into(),
        version: 1,
        parent_version: None,
        preamble: "Label the text.".into(),
        dimensions: keys
            .iter()
            .map(|k| Dimension {
                key: k.to_string(),
                name: k.to_uppercase(),
                definition: format!("whether the text is {k}"),
            })
            .collect(),
        output_contract: default_output_contract(),
    }
}

/// A vote set with a fixed, mixed pattern of labels and one invalid vote.
pub fn vote_set(passes: u32) -> VoteSet {
    let votes = (0..passes)
        .map(|i| match i % 4 {
            0 | 2 => Vote::valid(i, Label::Positive, "1"),
            1 => Vote::valid(i, Label::Negative, "0"),
            _ => Vote::invalid(i, "?"),
        })
        .collect();
    VoteSet {
        sample_id: "s".into(),
        dimension_key: "d".into(),
        votes,
        requested_passes: passes,
    }
}

/// Gold labels where every third sample is positive.
pub fn gold(n: usize) -> Vec<GoldRecord> {
    (0..n)
        .map(|i| GoldRecord {
            sample_id: format!("s{i}"),
            labels: [(
                "d".to_string(),
                if i % 3 == 0 {
                    Label::Positive
                } else {
                    Label::Negative
                },
            )]
            .into(),
            annotator_ids: vec![],
        })
        .collect()
}

/// Metric sets from a deterministic spread of confusion matrices.
pub fn metric_sets(n: u64) -> Vec<MetricSet> {
    (0..n)
        .map(|i| {
            metrics(&ConfusionMatrix {
                tp: 1 + i % 37,
                fp: i % 11,
                tn: 5 + i % 23,
                fn_: i % 7,
            })
            .expect("non-empty matrix")
        })
        .collect()
}
