use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::WorkflowError;
use crate::model::{AggregatedAnnotation, Consistency, DimensionResult, TextSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(format!("unknown export format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportSummary {
    pub rows: usize,
    /// Samples with every dimension resolved, before the consistency filter.
    pub candidates: usize,
}

impl ExportSummary {
    /// An empty export is a warning, not a failure.
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }
}

fn io_err(e: std::io::Error) -> WorkflowError {
    WorkflowError::Io {
        path: "export".into(),
        source: e,
    }
}

/// Writes one row per sample whose dimensions all resolved and whose lowest
/// consistency reaches `min_consistency`. Columns mirror the gold-label file
/// (`sample_id`, one 0/1 column per dimension) plus `text`, `consistency`
/// (the minimum across dimensions), `codebook_version` and `run_id`, so the
/// file loads back as gold labels.
#[allow(clippy::too_many_arguments)]
pub fn export_training_data(
    samples: &[TextSample],
    results: &[DimensionResult],
    dimension_keys: &[String],
    min_consistency: f64,
    run_id: &str,
    codebook_version: u32,
    format: ExportFormat,
    out: &mut dyn Write,
) -> Result<ExportSummary, WorkflowError> {
    if !(0.0..=1.0).contains(&min_consistency) {
        return Err(WorkflowError::InvalidMinConsistency(min_consistency));
    }
    let mut by_sample: HashMap<&str, HashMap<&str, &DimensionResult>> = HashMap::new();
    for r in results {
        by_sample
            .entry(r.sample_id())
            .or_default()
            .insert(r.dimension_key(), r);
    }

    let mut csv_writer =
        (format == ExportFormat::Csv).then(|| csv::Writer::from_writer(Vec::new()));
    if let Some(w) = csv_writer.as_mut() {
        let mut header = vec!["sample_id".to_string(), "text".to_string()];
        header.extend(dimension_keys.iter().cloned());
        header.extend(["consistency", "codebook_version", "run_id"].map(String::from));
        w.write_record(&header).map_err(|e| io_err(e.into()))?;
    }

    let mut summary = ExportSummary {
        rows: 0,
        candidates: 0,
    };
    let mut jsonl = Vec::new();
    for sample in samples {
        let Some(dims) = by_sample.get(sample.id.as_str()) else {
            continue;
        };
        let annotations: Option<Vec<&AggregatedAnnotation>> = dimension_keys
            .iter()
            .map(|k| dims.get(k.as_str()).and_then(|r| r.resolved()))
            .collect();
        let Some(annotations) = annotations else {
            continue;
        };
        summary.candidates += 1;
        let consistency: Consistency = annotations
            .iter()
            .map(|a| a.consistency)
            .min()
            .unwrap_or_else(Consistency::full);
        if consistency.as_f64() < min_consistency {
            continue;
        }
        summary.rows += 1;
        match csv_writer.as_mut() {
            Some(w) => {
                let mut row = vec![sample.id.clone(), sample.text.clone()];
                row.extend(annotations.iter().map(|a| a.label.to_string()));
                row.extend([
                    consistency.to_string(),
                    codebook_version.to_string(),
                    run_id.to_string(),
                ]);
                w.write_record(&row).map_err(|e| io_err(e.into()))?;
            }
            None => {
                let mut obj = serde_json::Map::new();
                obj.insert("sample_id".into(), sample.id.clone().into());
                obj.insert("text".into(), sample.text.clone().into());
                for (key, a) in dimension_keys.iter().zip(&annotations) {
                    obj.insert(key.clone(), a.label.bit().into());
                }
                obj.insert(
                    "consistency".into(),
                    consistency.to_string().parse::<f64>().unwrap_or(0.0).into(),
                );
                obj.insert("codebook_version".into(), codebook_version.into());
                obj.insert("run_id".into(), run_id.into());
                serde_json::to_writer(&mut jsonl, &obj).expect("json serializes");
                jsonl.push(b'\n');
            }
        }
    }
    let bytes = match csv_writer {
        Some(w) => w.into_inner().map_err(|e| io_err(e.into_error()))?,
        None => jsonl,
    };
    out.write_all(&bytes).map_err(io_err)?;
    Ok(summary)
}
