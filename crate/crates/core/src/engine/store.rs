//! On-disk layout of a run directory.
//!
//! ```text
//! runs/<run_id>/manifest.json    RunManifest
//! runs/<run_id>/passes.jsonl     one PassRecord per completed (sample, pass)
//! runs/<run_id>/votes.jsonl      one row per (sample, dimension, pass)
//! runs/<run_id>/aggregates.csv   sample_id,dimension,label,consistency,tie,valid_votes
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EngineError, PassRecord, RunManifest};
use crate::model::{
    AggregatedAnnotation, Consistency, DimensionResult, Label, UnresolvedReason, VoteSet,
};

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunPaths { dir: dir.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn journal(&self) -> PathBuf {
        self.dir.join("passes.jsonl")
    }

    pub fn votes(&self) -> PathBuf {
        self.dir.join("votes.jsonl")
    }

    pub fn aggregates(&self) -> PathBuf {
        self.dir.join("aggregates.csv")
    }
}

/// Writes through a temporary file and rename so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EngineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| EngineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| EngineError::io(path, e))
}

pub(crate) fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), EngineError> {
    let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub(crate) fn read_manifest(path: &Path) -> Result<RunManifest, EngineError> {
    let text = fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| EngineError::Corrupt {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

/// Reads the pass journal. A torn final line (the process died mid-write) is
/// dropped; corruption anywhere else is an error.
pub(crate) fn read_journal(path: &Path) -> Result<Vec<PassRecord>, EngineError> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(EngineError::io(path, e)),
    };
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::with_capacity(lines.len());
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PassRecord>(line) {
            Ok(record) => records.push(record),
            Err(_) if idx + 1 == lines.len() && !text.ends_with('\n') => break,
            Err(e) => {
                return Err(EngineError::Corrupt {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

/// One line of `votes.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRow {
    pub sample_id: String,
    pub dimension: String,
    pub pass: u32,
    pub label: Option<Label>,
    pub valid: bool,
    pub raw: String,
}

pub fn write_votes_jsonl(vote_sets: &[VoteSet], out: &mut impl Write) -> std::io::Result<()> {
    for set in vote_sets {
        for vote in &set.votes {
            let row = VoteRow {
                sample_id: set.sample_id.clone(),
                dimension: set.dimension_key.clone(),
                pass: vote.pass_index,
                label: vote.label,
                valid: vote.is_valid(),
                raw: vote.raw_fragment.clone(),
            };
            serde_json::to_writer(&mut *out, &row)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

const AGGREGATE_HEADER: [&str; 6] = [
    "sample_id",
    "dimension",
    "label",
    "consistency",
    "tie",
    "valid_votes",
];

/// Unresolvable dimensions have empty `label` and `consistency` cells; `tie`
/// distinguishes a tie under the `fail` policy from too few valid votes.
pub fn write_aggregates_csv(
    results: &[DimensionResult],
    out: &mut impl Write,
) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(AGGREGATE_HEADER)?;
    for result in results {
        match result {
            DimensionResult::Resolved(a) => writer.write_record([
                a.sample_id.as_str(),
                a.dimension_key.as_str(),
                &a.label.to_string(),
                &a.consistency.to_string(),
                if a.tie { "true" } else { "false" },
                &a.valid_votes.to_string(),
            ])?,
            DimensionResult::Unresolvable {
                sample_id,
                dimension_key,
                valid_votes,
                reason,
            } => writer.write_record([
                sample_id.as_str(),
                dimension_key.as_str(),
                "",
                "",
                if *reason == UnresolvedReason::Tie {
                    "true"
                } else {
                    "false"
                },
                &valid_votes.to_string(),
            ])?,
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn read_aggregates_csv(content: &str) -> Result<Vec<DimensionResult>, String> {
    let mut reader = csv::Reader::from_reader(content.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != AGGREGATE_HEADER {
        return Err(format!("unexpected aggregates header {headers:?}"));
    }
    let mut results = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| format!("line {line}: {e}"))?;
        let valid_votes: u32 = record[5]
            .parse()
            .map_err(|_| format!("line {line}: bad valid_votes {:?}", &record[5]))?;
        let tie = match &record[4] {
            "true" => true,
            "false" => false,
            other => return Err(format!("line {line}: bad tie {other:?}")),
        };
        if record[2].is_empty() {
            results.push(DimensionResult::Unresolvable {
                sample_id: record[0].to_string(),
                dimension_key: record[1].to_string(),
                valid_votes,
                reason: if tie {
                    UnresolvedReason::Tie
                } else {
                    UnresolvedReason::TooFewValidVotes
                },
            });
            continue;
        }
        let label = Label::parse_bit(&record[2])
            .ok_or_else(|| format!("line {line}: bad label {:?}", &record[2]))?;
        let consistency = record[3]
            .parse::<f64>()
            .ok()
            .and_then(|c| Consistency::from_decimal(c, valid_votes))
            .ok_or_else(|| format!("line {line}: bad consistency {:?}", &record[3]))?;
        results.push(DimensionResult::Resolved(AggregatedAnnotation {
            sample_id: record[0].to_string(),
            dimension_key: record[1].to_string(),
            label,
            consistency,
            tie,
            valid_votes,
        }));
    }
    Ok(results)
}

/// Manifest plus aggregated results, as loaded from a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub manifest: RunManifest,
    pub results: Vec<DimensionResult>,
}

/// Loads a run directory written by [`super::annotate_corpus`]. Aggregates are
/// only present once the run is complete.
pub fn load_run(dir: &Path) -> Result<RunRecord, EngineError> {
    let paths = RunPaths::new(dir);
    let manifest = read_manifest(&paths.manifest())?;
    let aggregates = paths.aggregates();
    let results = match fs::read_to_string(&aggregates) {
        Ok(text) => read_aggregates_csv(&text).map_err(|reason| EngineError::Corrupt {
            path: aggregates.clone(),
            line: 0,
            reason,
        })?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(EngineError::io(&aggregates, e)),
    };
    Ok(RunRecord { manifest, results })
}
