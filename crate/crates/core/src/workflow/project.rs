use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CodebookLedger, SplitSpec, WorkflowError};

/// Workflow state directory:
///
/// ```text
/// codebooks/          versioned codebook files
/// splits/split.json   refinement/holdout assignment
/// runs/<run_id>/      one engine run each
/// ledger.json         codebook ledger
/// reports/            evaluation, review and export outputs
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectLayout {
    pub root: PathBuf,
}

impl ProjectLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ProjectLayout { root: root.into() }
    }

    pub fn codebooks(&self) -> PathBuf {
        self.root.join("codebooks")
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits")
    }

    pub fn split(&self) -> PathBuf {
        self.splits().join("split.json")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run(&self, run_id: &str) -> PathBuf {
        self.runs().join(run_id)
    }

    pub fn ledger(&self) -> PathBuf {
        self.root.join("ledger.json")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn create_dirs(&self) -> Result<(), WorkflowError> {
        for dir in [self.codebooks(), self.splits(), self.runs(), self.reports()] {
            fs::create_dir_all(&dir).map_err(|e| WorkflowError::Io {
                path: dir,
                source: e,
            })?;
        }
        Ok(())
    }

    pub fn load_split(&self) -> Result<Option<SplitSpec>, WorkflowError> {
        read_json(&self.split())
    }

    pub fn save_split(&self, split: &SplitSpec) -> Result<(), WorkflowError> {
        write_json(&self.split(), split)
    }

    pub fn load_ledger(&self) -> Result<Option<CodebookLedger>, WorkflowError> {
        read_json(&self.ledger())
    }

    pub fn save_ledger(&self, ledger: &CodebookLedger) -> Result<(), WorkflowError> {
        write_json(&self.ledger(), ledger)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, WorkflowError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => {
            return Err(WorkflowError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
    };
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| WorkflowError::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Pretty JSON with a trailing newline, written through a temporary file.
pub(crate) fn write_json<T: Serialize + ?Sized>(
    path: &Path,
    value: &T,
) -> Result<(), WorkflowError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("state serializes");
    bytes.push(b'\n');
    let tmp = path.with_extension("tmp");
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| WorkflowError::Io { path: p, source: e }
    };
    fs::write(&tmp, &bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::split;
    use crate::GoldRecord;

    #[test]
    fn state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = ProjectLayout::new(dir.path());
        layout.create_dirs().unwrap();
        assert!(layout.load_split().unwrap().is_none());
        let gold: Vec<GoldRecord> = (0..8)
            .map(|i| GoldRecord {
                sample_id: format!("g{i}"),
                labels: Default::default(),
                annotator_ids: vec![],
            })
            .collect();
        let spec = split(&gold, 0.25, 3).unwrap();
        layout.save_split(&spec).unwrap();
        assert_eq!(layout.load_split().unwrap(), Some(spec));
        fs::write(layout.ledger(), "{").unwrap();
        assert!(matches!(
            layout.load_ledger(),
            Err(WorkflowError::Corrupt { .. })
        ));
    }
}
