use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use annogate::engine::{
    annotate_corpus, annotate_sample, EngineError, RunConfig, RunOptions, RunStatus,
};
use annogate::model::{default_output_contract, Codebook, Dimension};
use annogate::provider::{
    CompletionProvider, CompletionRequest, CompletionResult, ProviderError, ScriptEntry,
    ScriptedProvider, SimulatedProvider,
};
use annogate::{Label, TextSample};

fn codebook(version: u32) -> Codebook {
    Codebook {
        codebook_id: "cb".into(),
        version,
        parent_version: (version > 1).then(|| version - 1),
        preamble: "Classify the text.".into(),
        dimensions: vec![
            Dimension {
                key: "toxic".into(),
                name: "Toxic".into(),
                definition: "Contains insults.".into(),
            },
            Dimension {
                key: "topic".into(),
                name: "On topic".into(),
                definition: "About the election.".into(),
            },
        ],
        output_contract: default_output_contract(),
    }
}

fn samples(n: usize) -> Vec<TextSample> {
    (0..n)
        .map(|i| TextSample::new(format!("s{i:03}"), format!("text number {i}")))
        .collect()
}

struct Counting<P> {
    inner: P,
    calls: AtomicU64,
}

impl<P> Counting<P> {
    fn new(inner: P) -> Self {
        Counting {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: CompletionProvider> CompletionProvider for Counting<P> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

fn fixed_options() -> RunOptions {
    RunOptions {
        fixed_time: Some(chrono::DateTime::from_timestamp(1_700_000_000, 0).unwrap()),
        ..RunOptions::default()
    }
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn ten_samples_seven_passes_is_seventy_requests() {
    let dir = tempfile::tempdir().unwrap();
    let provider = Counting::new(SimulatedProvider::new(1, 0.8));
    let out = annotate_corpus(
        &samples(10),
        &codebook(1),
        &RunConfig::default(),
        &provider,
        dir.path(),
        "r1",
        &fixed_options(),
    )
    .unwrap();
    assert_eq!(provider.calls(), 70);
    assert_eq!(out.manifest.usage.total_requests, 70);
    assert_eq!(out.new_requests, 70);
    assert_eq!(out.results.len(), 20);
    assert_eq!(out.manifest.status, RunStatus::Complete);
    assert!(out.manifest.checkpoint.values().all(|p| *p == 7));
    let votes = fs::read_to_string(dir.path().join("votes.jsonl")).unwrap();
    assert_eq!(votes.lines().count(), 140);
}

#[test]
fn kill_and_resume_is_byte_identical() {
    let corpus = samples(12);
    let cb = codebook(1);
    let config = RunConfig {
        concurrency_limit: 3,
        ..RunConfig::default()
    };
    let provider = SimulatedProvider::new(9, 0.75);

    let straight = tempfile::tempdir().unwrap();
    annotate_corpus(
        &corpus,
        &cb,
        &config,
        &provider,
        straight.path(),
        "r",
        &fixed_options(),
    )
    .unwrap();

    let resumed = tempfile::tempdir().unwrap();
    let half = RunOptions {
        stop_after_requests: Some(42),
        ..fixed_options()
    };
    let err =
        annotate_corpus(&corpus, &cb, &config, &provider, resumed.path(), "r", &half).unwrap_err();
    match err {
        EngineError::Interrupted {
            completed_passes,
            total_passes,
        } => {
            assert_eq!(completed_passes, 42);
            assert_eq!(total_passes, 84);
        }
        other => panic!("unexpected {other:?}"),
    }
    let counting = Counting::new(provider);
    let out = annotate_corpus(
        &corpus,
        &cb,
        &config,
        &counting,
        resumed.path(),
        "r",
        &fixed_options(),
    )
    .unwrap();
    assert_eq!(counting.calls(), 42);
    assert_eq!(out.new_requests, 42);

    assert_eq!(
        read_dir_bytes(straight.path()),
        read_dir_bytes(resumed.path())
    );
}

#[test]
fn torn_journal_line_is_redone() {
    let corpus = samples(4);
    let cb = codebook(1);
    let config = RunConfig::default();
    let provider = SimulatedProvider::new(3, 0.9);
    let straight = tempfile::tempdir().unwrap();
    annotate_corpus(
        &corpus,
        &cb,
        &config,
        &provider,
        straight.path(),
        "r",
        &fixed_options(),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let stop = RunOptions {
        stop_after_requests: Some(10),
        ..fixed_options()
    };
    annotate_corpus(&corpus, &cb, &config, &provider, dir.path(), "r", &stop).unwrap_err();
    let journal = dir.path().join("passes.jsonl");
    let mut text = fs::read_to_string(&journal).unwrap();
    text.push_str("{\"sample_id\":\"s00");
    fs::write(&journal, text).unwrap();
    let counting = Counting::new(provider);
    annotate_corpus(
        &corpus,
        &cb,
        &config,
        &counting,
        dir.path(),
        "r",
        &fixed_options(),
    )
    .unwrap();
    assert_eq!(counting.calls(), 18);
    assert_eq!(read_dir_bytes(straight.path()), read_dir_bytes(dir.path()));
}

#[test]
fn resume_of_complete_run_issues_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = samples(5);
    let first = annotate_corpus(
        &corpus,
        &codebook(1),
        &RunConfig::default(),
        &SimulatedProvider::new(2, 0.8),
        dir.path(),
        "r",
        &fixed_options(),
    )
    .unwrap();
    let counting = Counting::new(SimulatedProvider::new(2, 0.8));
    let again = annotate_corpus(
        &corpus,
        &codebook(1),
        &RunConfig::default(),
        &counting,
        dir.path(),
        "r",
        &fixed_options(),
    )
    .unwrap();
    assert_eq!(counting.calls(), 0);
    assert_eq!(again.new_requests, 0);
    assert_eq!(again.results, first.results);
}

#[test]
fn conflicting_manifest_refused() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = samples(3);
    let provider = SimulatedProvider::new(2, 0.8);
    let config = RunConfig::default();
    annotate_corpus(
        &corpus,
        &codebook(1),
        &config,
        &provider,
        dir.path(),
        "r",
        &fixed_options(),
    )
    .unwrap();

    let conflict = |cb: &Codebook, cfg: &RunConfig, corpus: &[TextSample], id: &str| {
        matches!(
            annotate_corpus(corpus, cb, cfg, &provider, dir.path(), id, &fixed_options()),
            Err(EngineError::ManifestConflict(_))
        )
    };
    assert!(conflict(&codebook(2), &config, &corpus, "r"));
    let mut edited = codebook(1);
    edited.dimensions[0].definition = "Different.".into();
    assert!(conflict(&edited, &config, &corpus, "r"));
    assert!(conflict(
        &codebook(1),
        &RunConfig {
            passes: 9,
            ..config.clone()
        },
        &corpus,
        "r"
    ));
    assert!(conflict(&codebook(1), &config, &samples(4), "r"));
    assert!(conflict(&codebook(1), &config, &corpus, "other"));
    // Concurrency does not change results, so it is not a conflict.
    assert!(!conflict(
        &codebook(1),
        &RunConfig {
            concurrency_limit: 1,
            ..config.clone()
        },
        &corpus,
        "r"
    ));
}

#[test]
fn identical_script_text_gives_full_consistency() {
    let corpus = samples(3);
    let entries = corpus.iter().flat_map(|s| {
        (0..7)
            .map(move |p| ScriptEntry::for_pass(&s.id, p, "Reasoning...\nLABELS: toxic=1; topic=0"))
    });
    let provider = ScriptedProvider::new(entries).unwrap();
    for sample in &corpus {
        let out = annotate_sample(sample, &codebook(1), &RunConfig::default(), &provider).unwrap();
        for result in &out.results {
            let a = result.resolved().unwrap();
            assert!(a.consistency.is_full());
        }
        assert_eq!(out.results[0].resolved().unwrap().label, Label::Positive);
        assert_eq!(out.usage.total_requests, 7);
    }
}

#[test]
fn missing_script_entry_becomes_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let provider = ScriptedProvider::new([]).unwrap();
    let err = annotate_corpus(
        &samples(2),
        &codebook(1),
        &RunConfig::default(),
        &provider,
        dir.path(),
        "r",
        &fixed_options(),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        EngineError::Provider(ProviderError::ScriptMissing(_))
    ));
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
}

#[test]
fn garbage_output_is_unresolvable_not_fatal() {
    let corpus = samples(1);
    let entries = (0..7).map(|p| {
        ScriptEntry::for_pass(
            "s000",
            p,
            if p < 4 {
                "no idea"
            } else {
                "LABELS: toxic=1; topic=1"
            },
        )
    });
    let provider = ScriptedProvider::new(entries).unwrap();
    let out = annotate_sample(&corpus[0], &codebook(1), &RunConfig::default(), &provider).unwrap();
    assert!(out.results.iter().all(|r| r.resolved().is_none()));
    assert!(out.results.iter().all(|r| r.valid_votes() == 3));
}

#[test]
fn simulator_p_one_recovers_truth() {
    let corpus = samples(20);
    let mut provider = SimulatedProvider::new(4, 1.0);
    for (i, s) in corpus.iter().enumerate() {
        provider = provider.with_truth(
            s.id.clone(),
            vec![
                ("toxic".into(), Label::from_bit((i % 2) as u8).unwrap()),
                ("topic".into(), Label::from_bit((i % 3 == 0) as u8).unwrap()),
            ],
        );
    }
    for (i, s) in corpus.iter().enumerate() {
        let out = annotate_sample(s, &codebook(1), &RunConfig::default(), &provider).unwrap();
        let toxic = out.results[0].resolved().unwrap();
        assert_eq!(toxic.label.bit() as usize, i % 2);
        assert!(toxic.consistency.is_full());
    }
}

// Majority of 7 draws correct with p = 0.8: sum over k = 4..=7 of
// C(7,k) 0.8^k 0.2^(7-k), computed here independently of the engine.
fn binomial_majority(p: f64, l: u32) -> f64 {
    let choose =
        |n: u32, k: u32| (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1));
    (l / 2 + 1..=l)
        .map(|k| choose(l, k) * p.powi(k as i32) * (1.0 - p).powi((l - k) as i32))
        .sum()
}

#[test]
fn majority_accuracy_matches_binomial() {
    let expected = binomial_majority(0.8, 7);
    assert!((expected - 0.966_656).abs() < 1e-6);
    let mut cb = codebook(1);
    cb.dimensions.truncate(1);
    let provider = SimulatedProvider::new(11, 0.8);
    let n = 5000;
    let correct = (0..n)
        .filter(|i| {
            let s = TextSample::new(format!("m{i}"), "x");
            let out = annotate_sample(&s, &cb, &RunConfig::default(), &provider).unwrap();
            out.results[0].resolved().unwrap().label == Label::Negative
        })
        .count();
    let rate = correct as f64 / n as f64;
    assert!((rate - expected).abs() < 0.01, "rate {rate} vs {expected}");
}
