//! Offline provider that answers with the true label at a fixed probability.
//!
//! Every draw is a pure function of `(seed, sample_id, dimension, pass)`, so
//! results do not depend on call order or thread interleaving.

use std::collections::HashMap;

use super::{
    approx_tokens, CompletionProvider, CompletionRequest, CompletionResult, ProviderError,
    LABELS_PREFIX,
};
use crate::model::{GoldRecord, Label};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` keyed by its coordinates.
pub fn uniform_draw(seed: u64, sample_id: &str, dimension: &str, pass_index: u32) -> f64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, sample_id.as_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, dimension.as_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, &pass_index.to_le_bytes());
    let bits = splitmix64(splitmix64(h) ^ seed);
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Emits a `LABELS:` line where each dimension independently matches `truth`
/// with probability `correctness_probability` and is flipped otherwise.
/// Token counts are approximations; input tokens are left at zero because
/// no prompt is involved.
pub fn simulate_completion(
    truth: &[(String, Label)],
    correctness_probability: f64,
    seed: u64,
    sample_id: &str,
    pass_index: u32,
) -> CompletionResult {
    let assignments: Vec<String> = truth
        .iter()
        .map(|(key, label)| {
            let correct = uniform_draw(seed, sample_id, key, pass_index) < correctness_probability;
            let emitted = if correct { *label } else { label.flipped() };
            format!("{key}={}", emitted.bit())
        })
        .collect();
    let text = format!("{LABELS_PREFIX} {}", assignments.join("; "));
    CompletionResult {
        output_tokens: approx_tokens(&text),
        text,
        input_tokens: 0,
        latency_ms: 0,
        attempt_count: 1,
    }
}

/// Simulated provider driven by known labels, e.g. gold records.
#[derive(Debug, Clone)]
pub struct SimulatedProvider {
    seed: u64,
    default_probability: f64,
    truth: HashMap<String, Vec<(String, Label)>>,
    probability: HashMap<String, f64>,
}

impl SimulatedProvider {
    pub fn new(seed: u64, correctness_probability: f64) -> Self {
        SimulatedProvider {
            seed,
            default_probability: correctness_probability,
            truth: HashMap::new(),
            probability: HashMap::new(),
        }
    }

    pub fn with_truth(mut self, sample_id: impl Into<String>, truth: Vec<(String, Label)>) -> Self {
        self.truth.insert(sample_id.into(), truth);
        self
    }

    pub fn with_gold(mut self, gold: &[GoldRecord]) -> Self {
        for record in gold {
            self.truth.insert(
                record.sample_id.clone(),
                record.labels.iter().map(|(k, l)| (k.clone(), *l)).collect(),
            );
        }
        self
    }

    /// Overrides the correctness probability for one sample.
    pub fn with_probability(mut self, sample_id: impl Into<String>, p: f64) -> Self {
        self.probability.insert(sample_id.into(), p);
        self
    }
}

impl CompletionProvider for SimulatedProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, ProviderError> {
        // Samples without known truth are simulated against all-negative labels.
        let known = self.truth.get(request.sample_id);
        let truth: Vec<(String, Label)> = request
            .bundle
            .dimension_keys
            .iter()
            .map(|key| {
                let label = known
                    .and_then(|t| t.iter().find(|(k, _)| k == key))
                    .map_or(Label::Negative, |(_, l)| *l);
                (key.clone(), label)
            })
            .collect();
        let p = self
            .probability
            .get(request.sample_id)
            .copied()
            .unwrap_or(self.default_probability);
        let mut result =
            simulate_completion(&truth, p, self.seed, request.sample_id, request.pass_index);
        result.input_tokens =
            approx_tokens(&request.bundle.system_text) + approx_tokens(&request.bundle.user_text);
        Ok(result)
    }

    fn describe(&self) -> String {
        format!(
            "simulated:p={}:seed={}",
            self.default_probability, self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::parse_votes;

    fn truth(label: Label) -> Vec<(String, Label)> {
        vec![("a".to_string(), label)]
    }

    #[test]
    fn certain_and_impossible() {
        for pass in 0..50 {
            let sure = simulate_completion(&truth(Label::Positive), 1.0, 7, "s", pass);
            assert_eq!(sure.text, "LABELS: a=1");
            let never = simulate_completion(&truth(Label::Positive), 0.0, 7, "s", pass);
            assert_eq!(never.text, "LABELS: a=0");
        }
    }

    #[test]
    fn deterministic_per_coordinates() {
        let a = uniform_draw(1, "sample", "dim", 3);
        assert_eq!(a, uniform_draw(1, "sample", "dim", 3));
        assert_ne!(a, uniform_draw(1, "sample", "dim", 4));
        assert_ne!(a, uniform_draw(2, "sample", "dim", 3));
        assert_ne!(a, uniform_draw(1, "sample", "dim2", 3));
        assert!((0.0..1.0).contains(&a));
    }

    #[test]
    fn draws_look_uniform() {
        let n = 100_000;
        let mut buckets = [0usize; 10];
        for i in 0..n {
            let u = uniform_draw(99, &format!("s{i}"), "d", i % 7);
            buckets[(u * 10.0) as usize] += 1;
        }
        for count in buckets {
            assert!((count as f64 / n as f64 - 0.1).abs() < 0.005, "{buckets:?}");
        }
    }

    #[test]
    fn parse_recovers_emitted_labels() {
        let keys: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let truth: Vec<(String, Label)> = keys
            .iter()
            .zip([Label::Positive, Label::Negative, Label::Positive])
            .map(|(k, l)| (k.clone(), l))
            .collect();
        for pass in 0..20 {
            let result = simulate_completion(&truth, 0.5, 3, "s", pass);
            let votes = parse_votes(&result.text, &keys, pass);
            for ((key, _), vote) in truth.iter().zip(&votes) {
                let expected = if result.text.contains(&format!("{key}=1")) {
                    Label::Positive
                } else {
                    Label::Negative
                };
                assert_eq!(vote.label, Some(expected));
            }
        }
    }
}
