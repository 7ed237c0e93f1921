use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Codebook, DataError, GoldRecord, Label, TextSample};

const SAMPLE_ID: &str = "sample_id";
const ANNOTATOR_IDS: &str = "annotator_ids";

/// Loads gold labels and checks them against the corpus and codebook.
/// Corpus samples without a gold row are the unlabeled remainder.
pub fn join_gold(
    corpus: &[TextSample],
    gold_path: &Path,
    codebook: &Codebook,
) -> Result<Vec<GoldRecord>, DataError> {
    let content = fs::read_to_string(gold_path).map_err(|e| DataError::io(gold_path, e))?;
    let records = parse_gold_csv(&content, codebook)?;
    let ids: HashSet<&str> = corpus.iter().map(|s| s.id.as_str()).collect();
    if let Some(unknown) = records.iter().find(|r| !ids.contains(r.sample_id.as_str())) {
        return Err(DataError::UnknownSampleId(unknown.sample_id.clone()));
    }
    Ok(records)
}

/// Parses a gold CSV. Columns other than `sample_id`, the codebook's keys and
/// `annotator_ids` are ignored, so exported training files load as gold.
pub fn parse_gold_csv(content: &str, codebook: &Codebook) -> Result<Vec<GoldRecord>, DataError> {
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
    let id_col =
        headers
            .iter()
            .position(|h| h == SAMPLE_ID)
            .ok_or_else(|| DataError::MalformedRow {
                line: 1,
                reason: "header must start with `sample_id`".into(),
            })?;
    let annotator_col = headers.iter().position(|h| h == ANNOTATOR_IDS);
    let key_cols: Vec<(&str, Option<usize>)> = codebook
        .dimensions
        .iter()
        .map(|d| (d.key.as_str(), headers.iter().position(|h| h == d.key)))
        .collect();

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::MalformedRow {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let sample_id = record[id_col].trim().to_string();
        if sample_id.is_empty() {
            return Err(DataError::MalformedRow {
                line,
                reason: "empty sample_id".into(),
            });
        }
        if !seen.insert(sample_id.clone()) {
            return Err(DataError::DuplicateId(sample_id));
        }

        let mut labels = BTreeMap::new();
        let mut missing = Vec::new();
        for &(key, col) in &key_cols {
            let cell = col.and_then(|c| record.get(c)).unwrap_or("").trim();
            if cell.is_empty() {
                missing.push(key.to_string());
                continue;
            }
            let label = Label::parse_bit(cell).ok_or_else(|| DataError::MalformedRow {
                line,
                reason: format!("`{key}` must be 0 or 1, got {cell:?}"),
            })?;
            labels.insert(key.to_string(), label);
        }
        if !missing.is_empty() {
            return Err(DataError::IncompleteLabels { sample_id, missing });
        }

        let annotator_ids = annotator_col
            .and_then(|c| record.get(c))
            .map(|cell| {
                cell.split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default();
        records.push(GoldRecord {
            sample_id,
            labels,
            annotator_ids,
        });
    }
    Ok(records)
}

/// Writes gold records with columns in codebook order.
pub fn write_gold_csv(
    records: &[GoldRecord],
    codebook: &Codebook,
    out: &mut impl Write,
) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![SAMPLE_ID.to_string()];
    header.extend(codebook.keys());
    header.push(ANNOTATOR_IDS.to_string());
    writer.write_record(&header)?;
    for record in records {
        let mut row = vec![record.sample_id.clone()];
        for dim in &codebook.dimensions {
            row.push(
                record
                    .labels
                    .get(&dim.key)
                    .map(|l| l.to_string())
                    .unwrap_or_default(),
            );
        }
        row.push(record.annotator_ids.join(";"));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
