use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::store::{read_journal, read_manifest, write_atomic, write_manifest, RunPaths};
use super::{
    aggregate, AggregateError, CodebookRef, EngineError, RunConfig, RunManifest, RunStatus,
    ValidationEvidence,
};
use crate::model::{Codebook, DimensionResult, TextSample, UnresolvedReason, Vote, VoteSet};
use crate::provider::{
    parse_votes, render_prompt, CompletionProvider, CompletionRequest, PromptBundle,
    ProviderConfig, ProviderError, UsageRecord,
};

/// Result of one completion request, as journaled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassOutcome {
    Completed {
        text: String,
        input_tokens: u64,
        output_tokens: u64,
    },
    /// A soft provider failure; every dimension gets an invalid vote.
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassRecord {
    pub sample_id: String,
    pub pass: u32,
    pub outcome: PassOutcome,
}

impl PassRecord {
    fn votes(&self, keys: &[String]) -> Vec<Vote> {
        match &self.outcome {
            PassOutcome::Completed { text, .. } => parse_votes(text, keys, self.pass),
            PassOutcome::Failed { error } => keys
                .iter()
                .map(|_| Vote::invalid(self.pass, format!("error: {error}")))
                .collect(),
        }
    }
}

fn run_pass(
    provider: &dyn CompletionProvider,
    sample_id: &str,
    bundle: &PromptBundle,
    pass: u32,
) -> Result<PassRecord, ProviderError> {
    let request = CompletionRequest {
        sample_id,
        pass_index: pass,
        bundle,
    };
    let outcome = match provider.complete(&request) {
        Ok(result) => PassOutcome::Completed {
            text: result.text,
            input_tokens: result.input_tokens,
            output_tokens: result.output_tokens,
        },
        Err(e) if e.is_hard() => return Err(e),
        Err(e) => PassOutcome::Failed {
            error: e.to_string(),
        },
    };
    Ok(PassRecord {
        sample_id: sample_id.to_string(),
        pass,
        outcome,
    })
}

/// Applies the valid-vote floor and tie policy to one vote set.
pub fn resolve(votes: &VoteSet, config: &RunConfig) -> DimensionResult {
    let valid_votes = votes.valid_count();
    let unresolvable = |reason| DimensionResult::Unresolvable {
        sample_id: votes.sample_id.clone(),
        dimension_key: votes.dimension_key.clone(),
        valid_votes,
        reason,
    };
    if valid_votes < config.min_valid_votes {
        return unresolvable(UnresolvedReason::TooFewValidVotes);
    }
    match aggregate(votes, config.tie_policy) {
        Ok(annotation) => DimensionResult::Resolved(annotation),
        Err(AggregateError::NoValidVotes { .. }) => {
            unresolvable(UnresolvedReason::TooFewValidVotes)
        }
        Err(AggregateError::TieUnresolved { .. }) => unresolvable(UnresolvedReason::Tie),
    }
}

/// Votes and per-dimension outcomes for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleAnnotation {
    pub vote_sets: Vec<VoteSet>,
    pub results: Vec<DimensionResult>,
    pub usage: UsageRecord,
}

fn assemble(
    sample_id: &str,
    keys: &[String],
    records: &[&PassRecord],
    config: &RunConfig,
) -> SampleAnnotation {
    let mut vote_sets: Vec<VoteSet> = keys
        .iter()
        .map(|key| VoteSet {
            sample_id: sample_id.to_string(),
            dimension_key: key.clone(),
            votes: Vec::with_capacity(records.len()),
            requested_passes: config.passes,
        })
        .collect();
    let mut usage = UsageRecord::default();
    for record in records {
        for (set, vote) in vote_sets.iter_mut().zip(record.votes(keys)) {
            set.votes.push(vote);
        }
        usage.total_requests += 1;
        if let PassOutcome::Completed {
            input_tokens,
            output_tokens,
            ..
        } = &record.outcome
        {
            usage.total_input_tokens += input_tokens;
            usage.total_output_tokens += output_tokens;
        }
    }
    let results = vote_sets.iter().map(|set| resolve(set, config)).collect();
    SampleAnnotation {
        vote_sets,
        results,
        usage,
    }
}

/// Annotates one sample with `config.passes` sequential requests. Only hard
/// provider errors are returned; soft failures become invalid votes.
pub fn annotate_sample(
    sample: &TextSample,
    codebook: &Codebook,
    config: &RunConfig,
    provider: &dyn CompletionProvider,
) -> Result<SampleAnnotation, EngineError> {
    config.validate()?;
    let bundle = render_prompt(codebook, sample);
    let records = (0..config.passes)
        .map(|pass| run_pass(provider, &sample.id, &bundle, pass))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&PassRecord> = records.iter().collect();
    Ok(assemble(&sample.id, &bundle.dimension_keys, &refs, config))
}

/// Knobs for [`annotate_corpus`] that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop issuing requests after this many; the run is left resumable.
    pub stop_after_requests: Option<u64>,
    /// Prices used for the manifest's cost estimate.
    pub pricing: Option<ProviderConfig>,
    /// Attached to the manifest (full-corpus runs).
    pub validation: Option<ValidationEvidence>,
    /// Fixed timestamp for manifests, for reproducible artifacts.
    pub fixed_time: Option<DateTime<Utc>>,
}

impl RunOptions {
    fn timestamp(&self) -> String {
        self.fixed_time
            .unwrap_or_else(Utc::now)
            .to_rfc3339_opts(SecondsFormat::Secs, true)
    }
}

/// Everything produced by a corpus run, in corpus order then codebook order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResults {
    pub manifest: RunManifest,
    pub vote_sets: Vec<VoteSet>,
    pub results: Vec<DimensionResult>,
    /// Requests issued by this invocation (zero when resuming a finished run).
    pub new_requests: u64,
}

fn sample_digest(samples: &[TextSample]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for sample in samples {
        hasher.update(sample.id.as_bytes());
        hasher.update([0u8]);
        hasher.update(sample.text.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

enum Message {
    Pass(PassRecord),
    SampleDone,
    Hard(ProviderError),
}

const MANIFEST_EVERY_SAMPLES: usize = 64;

/// Annotates a corpus into `run_dir`, resuming from whatever a previous
/// invocation journaled there.
///
/// Up to `config.concurrency_limit` samples are in flight at once; each
/// sample's passes run in order on one worker. Every finished pass is
/// appended to `passes.jsonl` by a single writer before anything else
/// observes it, so a killed run loses at most the in-flight requests. Final
/// artifacts are assembled in corpus order and do not depend on scheduling.
pub fn annotate_corpus(
    samples: &[TextSample],
    codebook: &Codebook,
    config: &RunConfig,
    provider: &dyn CompletionProvider,
    run_dir: &Path,
    run_id: &str,
    options: &RunOptions,
) -> Result<RunResults, EngineError> {
    config.validate()?;
    codebook.validate()?;
    let paths = RunPaths::new(run_dir);
    fs::create_dir_all(run_dir).map_err(|e| EngineError::io(run_dir, e))?;

    let codebook_ref = CodebookRef::of(codebook);
    let digest = sample_digest(samples);
    let mut manifest = if paths.manifest().exists() {
        let existing = read_manifest(&paths.manifest())?;
        check_conflict(&existing, run_id, &codebook_ref, config, &digest)?;
        existing
    } else {
        RunManifest {
            run_id: run_id.to_string(),
            codebook: codebook_ref,
            config: config.clone(),
            provider: provider.describe(),
            sample_count: samples.len(),
            sample_digest: digest,
            started_at: options.timestamp(),
            finished_at: None,
            usage: UsageRecord::default(),
            checkpoint: BTreeMap::new(),
            status: RunStatus::Running,
            validation: options.validation.clone(),
        }
    };

    let mut journal: HashMap<String, BTreeMap<u32, PassRecord>> = HashMap::new();
    for record in read_journal(&paths.journal())? {
        journal
            .entry(record.sample_id.clone())
            .or_default()
            .insert(record.pass, record);
    }

    if manifest.status == RunStatus::Complete {
        let (vote_sets, results, _) = assemble_all(samples, codebook, config, &journal);
        return Ok(RunResults {
            manifest,
            vote_sets,
            results,
            new_requests: 0,
        });
    }
    manifest.status = RunStatus::Running;
    manifest.config.concurrency_limit = config.concurrency_limit;
    write_manifest(&paths.manifest(), &manifest)?;

    let total_passes = samples.len() as u64 * u64::from(config.passes);
    let pending: Vec<(usize, Vec<u32>)> = samples
        .iter()
        .enumerate()
        .filter_map(|(idx, sample)| {
            let done = journal.get(&sample.id);
            let missing: Vec<u32> = (0..config.passes)
                .filter(|p| done.is_none_or(|d| !d.contains_key(p)))
                .collect();
            (!missing.is_empty()).then_some((idx, missing))
        })
        .collect();

    let journal_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(paths.journal())
        .map_err(|e| EngineError::io(paths.journal(), e))?;
    let mut journal_out = BufWriter::new(journal_file);

    let next = AtomicUsize::new(0);
    let issued = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let interrupted = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Message>();
    let workers = config.concurrency_limit.min(pending.len()).max(1);

    let mut hard_error = None;
    let mut write_error = None;
    let mut new_requests = 0u64;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, issued, stop, interrupted, pending) =
                (&next, &issued, &stop, &interrupted, &pending);
            scope.spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let Some((idx, passes)) = pending.get(next.fetch_add(1, Ordering::SeqCst))
                    else {
                        break;
                    };
                    let sample = &samples[*idx];
                    let bundle = render_prompt(codebook, sample);
                    for &pass in passes {
                        if stop.load(Ordering::SeqCst) {
                            return;
                        }
                        if let Some(limit) = options.stop_after_requests {
                            if issued.fetch_add(1, Ordering::SeqCst) >= limit {
                                interrupted.store(true, Ordering::SeqCst);
                                stop.store(true, Ordering::SeqCst);
                                return;
                            }
                        }
                        match run_pass(provider, &sample.id, &bundle, pass) {
                            Ok(record) => {
                                let _ = tx.send(Message::Pass(record));
                            }
                            Err(e) => {
                                stop.store(true, Ordering::SeqCst);
                                let _ = tx.send(Message::Hard(e));
                                return;
                            }
                        }
                    }
                    let _ = tx.send(Message::SampleDone);
                }
            });
        }
        drop(tx);

        let mut samples_done = 0usize;
        for message in rx {
            match message {
                Message::Pass(record) => {
                    let line = serde_json::to_string(&record).expect("record serializes");
                    let written = writeln!(journal_out, "{line}").and_then(|_| journal_out.flush());
                    if let Err(e) = written {
                        stop.store(true, Ordering::SeqCst);
                        write_error.get_or_insert(EngineError::io(paths.journal(), e));
                        continue;
                    }
                    new_requests += 1;
                    journal
                        .entry(record.sample_id.clone())
                        .or_default()
                        .insert(record.pass, record);
                }
                Message::SampleDone => {
                    samples_done += 1;
                    if samples_done.is_multiple_of(MANIFEST_EVERY_SAMPLES) {
                        refresh_progress(&mut manifest, &journal, options);
                        if let Err(e) = write_manifest(&paths.manifest(), &manifest) {
                            write_error.get_or_insert(e);
                        }
                    }
                }
                Message::Hard(e) => {
                    hard_error.get_or_insert(e);
                }
            }
        }
    });
    drop(journal_out);

    refresh_progress(&mut manifest, &journal, options);
    if let Some(e) = write_error {
        manifest.status = RunStatus::Failed;
        let _ = write_manifest(&paths.manifest(), &manifest);
        return Err(e);
    }
    if let Some(e) = hard_error {
        manifest.status = RunStatus::Failed;
        write_manifest(&paths.manifest(), &manifest)?;
        return Err(e.into());
    }
    if interrupted.load(Ordering::SeqCst) {
        write_manifest(&paths.manifest(), &manifest)?;
        return Err(EngineError::Interrupted {
            completed_passes: manifest.usage.total_requests,
            total_passes,
        });
    }

    let (vote_sets, results, records) = assemble_all(samples, codebook, config, &journal);
    manifest.status = RunStatus::Complete;
    manifest.finished_at = Some(options.timestamp());

    let mut canonical = Vec::new();
    for record in &records {
        serde_json::to_writer(&mut canonical, record).expect("record serializes");
        canonical.push(b'\n');
    }
    write_atomic(&paths.journal(), &canonical)?;
    let mut votes = Vec::new();
    super::write_votes_jsonl(&vote_sets, &mut votes)
        .map_err(|e| EngineError::io(paths.votes(), e))?;
    write_atomic(&paths.votes(), &votes)?;
    let mut aggregates = Vec::new();
    super::write_aggregates_csv(&results, &mut aggregates)
        .map_err(|e| EngineError::io(paths.aggregates(), e.into()))?;
    write_atomic(&paths.aggregates(), &aggregates)?;
    write_manifest(&paths.manifest(), &manifest)?;

    Ok(RunResults {
        manifest,
        vote_sets,
        results,
        new_requests,
    })
}

fn check_conflict(
    existing: &RunManifest,
    run_id: &str,
    codebook: &CodebookRef,
    config: &RunConfig,
    digest: &str,
) -> Result<(), EngineError> {
    let conflict = |msg: String| Err(EngineError::ManifestConflict(msg));
    if existing.run_id != run_id {
        return conflict(format!(
            "directory belongs to run {:?}, not {run_id:?}",
            existing.run_id
        ));
    }
    if existing.codebook != *codebook {
        return conflict(format!(
            "run used codebook {} v{}, now {} v{} (or its text changed)",
            existing.codebook.codebook_id,
            existing.codebook.version,
            codebook.codebook_id,
            codebook.version
        ));
    }
    if !existing.config.result_equivalent(config) {
        return conflict("run configuration changed".into());
    }
    if existing.sample_digest != digest {
        return conflict("sample set changed".into());
    }
    Ok(())
}

fn refresh_progress(
    manifest: &mut RunManifest,
    journal: &HashMap<String, BTreeMap<u32, PassRecord>>,
    options: &RunOptions,
) {
    let mut usage = UsageRecord::default();
    let mut checkpoint = BTreeMap::new();
    for (sample_id, passes) in journal {
        checkpoint.insert(sample_id.clone(), passes.len() as u32);
        for record in passes.values() {
            usage.total_requests += 1;
            if let PassOutcome::Completed {
                input_tokens,
                output_tokens,
                ..
            } = &record.outcome
            {
                usage.total_input_tokens += input_tokens;
                usage.total_output_tokens += output_tokens;
            }
        }
    }
    if let Some(pricing) = &options.pricing {
        usage = usage.priced(pricing);
    }
    manifest.usage = usage;
    manifest.checkpoint = checkpoint;
}

fn assemble_all<'a>(
    samples: &[TextSample],
    codebook: &Codebook,
    config: &RunConfig,
    journal: &'a HashMap<String, BTreeMap<u32, PassRecord>>,
) -> (Vec<VoteSet>, Vec<DimensionResult>, Vec<&'a PassRecord>) {
    let keys = codebook.keys();
    let mut vote_sets = Vec::with_capacity(samples.len() * keys.len());
    let mut results = Vec::with_capacity(samples.len() * keys.len());
    let mut all_records = Vec::with_capacity(samples.len() * config.passes as usize);
    for sample in samples {
        let records: Vec<&PassRecord> = journal
            .get(&sample.id)
            .map(|passes| passes.values().filter(|r| r.pass < config.passes).collect())
            .unwrap_or_default();
        let annotation = assemble(&sample.id, &keys, &records, config);
        vote_sets.extend(annotation.vote_sets);
        results.extend(annotation.results);
        all_records.extend(records);
    }
    (vote_sets, results, all_records)
}
