use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DataError, TextSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(format!(
                "unknown corpus format {other:?} (expected jsonl or csv)"
            )),
        }
    }
}

/// Loads every row of a corpus file, preserving order.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<TextSample>, DataError> {
    let content = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    match format {
        CorpusFormat::Jsonl => parse_corpus_jsonl(&content),
        CorpusFormat::Csv => parse_corpus_csv(&content),
    }
}

pub fn parse_corpus_jsonl(content: &str) -> Result<Vec<TextSample>, DataError> {
    let mut samples = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| DataError::MalformedRow {
                line: line_no,
                reason: e.to_string(),
            })?;
        let serde_json::Value::Object(object) = value else {
            return Err(DataError::MalformedRow {
                line: line_no,
                reason: "expected a JSON object".into(),
            });
        };
        let mut id = None;
        let mut text = None;
        let mut metadata = BTreeMap::new();
        for (key, value) in object {
            match (key.as_str(), value) {
                ("id", serde_json::Value::String(s)) => id = Some(s),
                ("text", serde_json::Value::String(s)) => text = Some(s),
                ("id" | "text", _) => {
                    return Err(DataError::MalformedRow {
                        line: line_no,
                        reason: format!("`{key}` must be a string"),
                    })
                }
                (_, serde_json::Value::String(s)) => {
                    metadata.insert(key, s);
                }
                (_, other) => {
                    metadata.insert(key, other.to_string());
                }
            }
        }
        let id = id.ok_or_else(|| DataError::MalformedRow {
            line: line_no,
            reason: "missing `id`".into(),
        })?;
        let text = text.ok_or_else(|| DataError::MalformedRow {
            line: line_no,
            reason: "missing `text`".into(),
        })?;
        samples.push((line_no, TextSample { id, text, metadata }));
    }
    finish(samples)
}

pub fn parse_corpus_csv(content: &str) -> Result<Vec<TextSample>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DataError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let id_col = headers.iter().position(|h| h == "id");
    let text_col = headers.iter().position(|h| h == "text");
    let (Some(id_col), Some(text_col)) = (id_col, text_col) else {
        return Err(DataError::MalformedRow {
            line: 1,
            reason: "header must include `id` and `text`".into(),
        });
    };

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::MalformedRow {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line_no = record.position().map_or(0, |p| p.line() as usize);
        let mut metadata = BTreeMap::new();
        for (col, value) in record.iter().enumerate() {
            if col != id_col && col != text_col && !value.is_empty() {
                metadata.insert(headers[col].to_string(), value.to_string());
            }
        }
        samples.push((
            line_no,
            TextSample {
                id: record[id_col].to_string(),
                text: record[text_col].to_string(),
                metadata,
            },
        ));
    }
    finish(samples)
}

fn finish(rows: Vec<(usize, TextSample)>) -> Result<Vec<TextSample>, DataError> {
    let mut seen = HashSet::with_capacity(rows.len());
    let mut samples = Vec::with_capacity(rows.len());
    for (line, sample) in rows {
        if sample.id.is_empty() {
            return Err(DataError::MalformedRow {
                line,
                reason: "empty `id`".into(),
            });
        }
        if sample.text.trim().is_empty() {
            return Err(DataError::MalformedRow {
                line,
                reason: "empty `text`".into(),
            });
        }
        if !seen.insert(sample.id.clone()) {
            return Err(DataError::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    Ok(samples)
}

/// Writes samples in the given format. CSV output carries one column per
/// metadata key seen in any sample; empty cells are dropped again on load.
pub fn write_corpus(
    samples: &[TextSample],
    format: CorpusFormat,
    out: &mut impl Write,
) -> std::io::Result<()> {
    match format {
        CorpusFormat::Jsonl => {
            for sample in samples {
                let mut object = serde_json::Map::new();
                object.insert("id".into(), sample.id.clone().into());
                object.insert("text".into(), sample.text.clone().into());
                for (k, v) in &sample.metadata {
                    object.insert(k.clone(), v.clone().into());
                }
                serde_json::to_writer(&mut *out, &object)?;
                out.write_all(b"\n")?;
            }
            Ok(())
        }
        CorpusFormat::Csv => {
            let meta_keys: std::collections::BTreeSet<&str> = samples
                .iter()
                .flat_map(|s| s.metadata.keys().map(String::as_str))
                .collect();
            let mut writer = csv::Writer::from_writer(out);
            let mut header = vec!["id", "text"];
            header.extend(meta_keys.iter().copied());
            writer.write_record(&header)?;
            for sample in samples {
                let mut row = vec![sample.id.as_str(), sample.text.as_str()];
                row.extend(
                    meta_keys
                        .iter()
                        .map(|k| sample.metadata.get(*k).map_or("", String::as_str)),
                );
                writer.write_record(&row)?;
            }
            writer.flush()
        }
    }
}
