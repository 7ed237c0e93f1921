use std::collections::BTreeSet;

use annogate::engine::{annotate_corpus, RunConfig, RunOptions, RunRecord};
use annogate::model::{default_output_contract, Codebook, Dimension};
use annogate::provider::SimulatedProvider;
use annogate::workflow::{
    evaluate_holdout, evaluate_refinement, label_full_corpus, split, CodebookLedger,
    GateThresholds, SplitSpec, WorkflowError,
};
use annogate::{GoldRecord, Label, TextSample};
use proptest::prelude::*;

fn codebook(version: u32) -> Codebook {
    Codebook {
        codebook_id: "cb".into(),
        version,
        parent_version: (version > 1).then(|| version - 1),
        preamble: "Label the text.".into(),
        dimensions: vec![Dimension {
            key: "d".into(),
            name: "D".into(),
            definition: format!("definition revision {version}"),
        }],
        output_contract: default_output_contract(),
    }
}

struct Harness {
    samples: Vec<TextSample>,
    gold: Vec<GoldRecord>,
    split: SplitSpec,
    provider: SimulatedProvider,
    dir: tempfile::TempDir,
    runs: usize,
}

impl Harness {
    fn new(n: usize) -> Self {
        let samples: Vec<TextSample> = (0..n)
            .map(|i| TextSample::new(format!("g{i:03}"), format!("gold text {i}")))
            .collect();
        let gold: Vec<GoldRecord> = (0..n)
            .map(|i| GoldRecord {
                sample_id: format!("g{i:03}"),
                labels: [(
                    "d".to_string(),
                    Label::from_bit((i % 3 == 0) as u8).unwrap(),
                )]
                .into(),
                annotator_ids: vec!["h1".into()],
            })
            .collect();
        let split = split(&gold, 0.25, 42).unwrap();
        let provider = SimulatedProvider::new(5, 0.85).with_gold(&gold);
        Harness {
            samples,
            gold,
            split,
            provider,
            dir: tempfile::tempdir().unwrap(),
            runs: 0,
        }
    }

    fn run(&mut self, ids: &BTreeSet<&str>, cb: &Codebook) -> RunRecord {
        self.runs += 1;
        let subset: Vec<TextSample> = self
            .samples
            .iter()
            .filter(|s| ids.contains(s.id.as_str()))
            .cloned()
            .collect();
        let id = format!("run{}", self.runs);
        let out = annotate_corpus(
            &subset,
            cb,
            &RunConfig::default(),
            &self.provider,
            &self.dir.path().join(&id),
            &id,
            &RunOptions::default(),
        )
        .unwrap();
        RunRecord {
            manifest: out.manifest,
            results: out.results,
        }
    }

    fn refinement_run(&mut self, cb: &Codebook, leak: bool) -> RunRecord {
        let split = self.split.clone();
        let mut ids = split.refinement_ids();
        if leak {
            ids.insert(split.holdout_ids().into_iter().next().unwrap());
        }
        self.run(&ids, cb)
    }

    fn holdout_run(&mut self, cb: &Codebook) -> RunRecord {
        let split = self.split.clone();
        self.run(&split.holdout_ids(), cb)
    }
}

fn thresholds() -> GateThresholds {
    GateThresholds {
        f1: Some(0.5),
        ..GateThresholds::default()
    }
}

#[test]
fn proper_sequence_freezes_and_unlocks_corpus() {
    let mut h = Harness::new(40);
    let mut ledger = CodebookLedger::new(&codebook(1)).unwrap();
    let run = h.refinement_run(&codebook(1), false);
    let report = evaluate_refinement(&mut ledger, &run, &h.gold, &h.split, &thresholds()).unwrap();
    assert_eq!(report.evaluations[0].metrics.confusion.total(), 10);
    assert!(report.previous_run_id.is_none());

    ledger.register_version(&codebook(2)).unwrap();
    let run = h.refinement_run(&codebook(2), false);
    let report = evaluate_refinement(&mut ledger, &run, &h.gold, &h.split, &thresholds()).unwrap();
    assert_eq!(report.previous_run_id.as_deref(), Some("run1"));

    let run = h.holdout_run(&codebook(2));
    let holdout = evaluate_holdout(&mut ledger, &run, &h.gold, &h.split, &thresholds()).unwrap();
    assert!(ledger.frozen);
    assert_eq!(holdout.evaluations[0].metrics.confusion.total(), 30);

    let again = h.holdout_run(&codebook(2));
    assert!(matches!(
        evaluate_holdout(&mut ledger, &again, &h.gold, &h.split, &thresholds()),
        Err(WorkflowError::AlreadyFrozen)
    ));

    let corpus: Vec<TextSample> = (0..100)
        .map(|i| TextSample::new(format!("u{i}"), format!("unlabeled {i}")))
        .collect();
    let out = label_full_corpus(
        &ledger,
        &corpus,
        &codebook(2),
        &RunConfig::default(),
        &h.provider,
        &h.dir.path().join("full"),
        "full",
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(out.manifest.usage.total_requests, 700);
    assert_eq!(out.results.len(), 100);
    let evidence = out
        .manifest
        .validation
        .expect("validation evidence attached");
    assert_eq!(evidence.metrics["d"], holdout.evaluations[0].metrics);
    assert_eq!(evidence.metrics["d"].f1, holdout.evaluations[0].metrics.f1);
    let on_disk = std::fs::read_to_string(h.dir.path().join("full/manifest.json")).unwrap();
    assert!(on_disk.contains("\"holdout_run_id\""));
}

#[test]
fn unfrozen_ledger_refuses_corpus() {
    let h = Harness::new(8);
    let ledger = CodebookLedger::new(&codebook(1)).unwrap();
    let err = label_full_corpus(
        &ledger,
        &h.samples,
        &codebook(1),
        &RunConfig::default(),
        &h.provider,
        &h.dir.path().join("x"),
        "x",
        &RunOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, WorkflowError::UnvalidatedCodebook));
    assert!(!h.dir.path().join("x").exists());
}

#[test]
fn stale_holdout_codebook() {
    let mut h = Harness::new(12);
    let mut ledger = CodebookLedger::new(&codebook(1)).unwrap();
    let run = h.refinement_run(&codebook(1), false);
    evaluate_refinement(&mut ledger, &run, &h.gold, &h.split, &thresholds()).unwrap();
    ledger.register_version(&codebook(2)).unwrap();
    let run = h.holdout_run(&codebook(1));
    assert!(matches!(
        evaluate_holdout(&mut ledger, &run, &h.gold, &h.split, &thresholds()),
        Err(WorkflowError::StaleCodebook { used: 1, latest: 2 })
    ));
}

#[test]
fn leaked_refinement_run() {
    let mut h = Harness::new(12);
    let mut ledger = CodebookLedger::new(&codebook(1)).unwrap();
    let run = h.refinement_run(&codebook(1), true);
    let err = evaluate_refinement(&mut ledger, &run, &h.gold, &h.split, &thresholds()).unwrap_err();
    assert!(matches!(err, WorkflowError::HoldoutLeak { .. }));
    assert_eq!(ledger.refinement_count(), 0);
}

#[test]
fn partial_refinement_run_is_incomplete() {
    let mut h = Harness::new(12);
    let mut ledger = CodebookLedger::new(&codebook(1)).unwrap();
    let split = h.split.clone();
    let first: BTreeSet<&str> = split.refinement_ids().into_iter().take(1).collect();
    let run = h.run(&first, &codebook(1));
    assert!(matches!(
        evaluate_refinement(&mut ledger, &run, &h.gold, &h.split, &thresholds()),
        Err(WorkflowError::IncompleteRun { .. })
    ));
}

#[test]
fn edited_codebook_text_is_not_the_registered_version() {
    let mut h = Harness::new(12);
    let mut ledger = CodebookLedger::new(&codebook(1)).unwrap();
    let mut edited = codebook(1);
    edited.preamble.push_str(" Be careful.");
    let run = h.refinement_run(&edited, false);
    assert!(matches!(
        evaluate_refinement(&mut ledger, &run, &h.gold, &h.split, &thresholds()),
        Err(WorkflowError::VersionConflict(_))
    ));
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Revise,
    Refine { leak: bool },
    Holdout { stale: bool },
    LabelCorpus,
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Revise),
        any::<bool>().prop_map(|leak| Op::Refine { leak }),
        any::<bool>().prop_map(|stale| Op::Holdout { stale }),
        Just(Op::LabelCorpus),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Every operation ordering either follows refinement -> holdout -> freeze
    // -> corpus, or is stopped by the matching gate error.
    #[test]
    fn holdout_hygiene_under_any_ordering(ops in prop::collection::vec(arb_op(), 1..10)) {
        let mut h = Harness::new(8);
        let mut ledger = CodebookLedger::new(&codebook(1)).unwrap();
        let mut latest = 1u32;
        let mut refined: BTreeSet<u32> = BTreeSet::new();
        let mut frozen_at: Option<u32> = None;

        for op in ops {
            match op {
                Op::Revise => {
                    let result = ledger.register_version(&codebook(latest + 1));
                    if frozen_at.is_some() {
                        prop_assert!(matches!(result, Err(WorkflowError::AlreadyFrozen)));
                    } else {
                        prop_assert!(result.is_ok());
                        latest += 1;
                    }
                }
                Op::Refine { leak } => {
                    let run = h.refinement_run(&codebook(latest), leak);
                    let result = evaluate_refinement(&mut ledger, &run, &h.gold, &h.split, &thresholds());
                    match (frozen_at, leak) {
                        (Some(_), _) => prop_assert!(matches!(result, Err(WorkflowError::AlreadyFrozen))),
                        (None, true) => prop_assert!(matches!(result, Err(WorkflowError::HoldoutLeak { .. })), "expected leak"),
                        (None, false) => {
                            prop_assert!(result.is_ok());
                            refined.insert(latest);
                        }
                    }
                }
                Op::Holdout { stale } => {
                    let version = if stale && latest > 1 { latest - 1 } else { latest };
                    let run = h.holdout_run(&codebook(version));
                    let result = evaluate_holdout(&mut ledger, &run, &h.gold, &h.split, &thresholds());
                    if frozen_at.is_some() {
                        prop_assert!(matches!(result, Err(WorkflowError::AlreadyFrozen)));
                    } else if version != latest {
                        prop_assert!(matches!(result, Err(WorkflowError::StaleCodebook { .. })), "expected stale");
                    } else if !refined.contains(&latest) {
                        prop_assert!(matches!(result, Err(WorkflowError::NoRefinement(_))));
                    } else {
                        prop_assert!(result.is_ok());
                        frozen_at = Some(latest);
                    }
                }
                Op::LabelCorpus => {
                    h.runs += 1;
                    let id = format!("corpus{}", h.runs);
                    let unlabeled = [TextSample::new("u1", "new text")];
                    let result = label_full_corpus(
                        &ledger,
                        &unlabeled,
                        &codebook(latest),
                        &RunConfig::default(),
                        &h.provider,
                        &h.dir.path().join(&id),
                        &id,
                        &RunOptions::default(),
                    );
                    match frozen_at {
                        None => prop_assert!(matches!(result, Err(WorkflowError::UnvalidatedCodebook))),
                        Some(v) => {
                            prop_assert!(refined.contains(&v));
                            let out = result.unwrap();
                            prop_assert_eq!(out.manifest.validation.unwrap().codebook_version, v);
                        }
                    }
                }
            }
            prop_assert_eq!(ledger.frozen, frozen_at.is_some());
        }
    }
}
