//! Shared data model: samples, codebooks of binary dimensions, gold labels,
//! votes and aggregated annotations.
//!
//! Labels are an explicit two-valued enum at this layer. Files encode them as
//! `0`/`1`.

mod codebook;
mod corpus;
mod gold;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use codebook::{default_output_contract, load_codebook, parse_codebook, write_codebook};
pub use corpus::{load_corpus, parse_corpus_csv, parse_corpus_jsonl, write_corpus, CorpusFormat};
pub use gold::{join_gold, parse_gold_csv, write_gold_csv};

/// Errors raised while loading or validating model files.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("corpus contains no samples")]
    EmptyCorpus,
    #[error("codebook defines no dimensions")]
    MissingDimension,
    #[error("duplicate dimension key {0:?}")]
    DuplicateDimensionKey(String),
    #[error("codebook has no output section")]
    MissingOutputContract,
    #[error("malformed codebook: {0}")]
    MalformedCodebook(String),
    #[error("gold label references unknown sample id {0:?}")]
    UnknownSampleId(String),
    #[error("gold labels for {sample_id:?} are missing dimensions {missing:?}")]
    IncompleteLabels {
        sample_id: String,
        missing: Vec<String>,
    },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Binary label of one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    /// Parses the file encoding (`0` or `1`, surrounding whitespace allowed).
    pub fn parse_bit(s: &str) -> Option<Label> {
        match s.trim() {
            "0" => Some(Label::Negative),
            "1" => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bit())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let bit = u8::deserialize(deserializer)?;
        Label::from_bit(bit)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {bit}")))
    }
}

/// A unit of text to annotate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSample {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl TextSample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        TextSample {
            id: id.into(),
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }
}

/// One binary annotation task within a codebook.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub key: String,
    pub name: String,
    pub definition: String,
}

/// Versioned instructions defining the dimensions to annotate. The same text
/// guides human coders and forms the body of the model prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub codebook_id: String,
    pub version: u32,
    pub parent_version: Option<u32>,
    pub preamble: String,
    pub dimensions: Vec<Dimension>,
    pub output_contract: String,
}

impl Codebook {
    pub fn keys(&self) -> Vec<String> {
        self.dimensions.iter().map(|d| d.key.clone()).collect()
    }

    pub fn dimension(&self, key: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.key == key)
    }

    /// Checks the structural invariants enforced by [`load_codebook`].
    pub fn validate(&self) -> Result<(), DataError> {
        if self.codebook_id.trim().is_empty() {
            return Err(DataError::MalformedCodebook("empty codebook_id".into()));
        }
        if self.version == 0 {
            return Err(DataError::MalformedCodebook("version starts at 1".into()));
        }
        if let Some(parent) = self.parent_version {
            if parent >= self.version {
                return Err(DataError::MalformedCodebook(format!(
                    "parent_version {parent} must precede version {}",
                    self.version
                )));
            }
        }
        if self.dimensions.is_empty() {
            return Err(DataError::MissingDimension);
        }
        let mut seen = std::collections::BTreeSet::new();
        for dim in &self.dimensions {
            if dim.key.is_empty() || !is_valid_key(&dim.key) {
                return Err(DataError::MalformedCodebook(format!(
                    "invalid dimension key {:?}",
                    dim.key
                )));
            }
            if !seen.insert(dim.key.as_str()) {
                return Err(DataError::DuplicateDimensionKey(dim.key.clone()));
            }
        }
        if self.output_contract.trim().is_empty() {
            return Err(DataError::MissingOutputContract);
        }
        Ok(())
    }

    /// True when both codebooks define the same ordered key list.
    pub fn same_keys(&self, other: &Codebook) -> bool {
        self.dimensions.len() == other.dimensions.len()
            && self
                .dimensions
                .iter()
                .zip(&other.dimensions)
                .all(|(a, b)| a.key == b.key)
    }
}

/// Dimension keys appear inside `LABELS:` lines and CSV headers, so they are
/// restricted to ASCII identifiers.
pub fn is_valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Expert labels for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub sample_id: String,
    pub labels: BTreeMap<String, Label>,
    #[serde(default)]
    pub annotator_ids: Vec<String>,
}

/// One pass's classification of one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub pass_index: u32,
    pub label: Option<Label>,
    pub raw_fragment: String,
}

impl Vote {
    pub fn valid(pass_index: u32, label: Label, raw_fragment: impl Into<String>) -> Self {
        Vote {
            pass_index,
            label: Some(label),
            raw_fragment: raw_fragment.into(),
        }
    }

    pub fn invalid(pass_index: u32, raw_fragment: impl Into<String>) -> Self {
        Vote {
            pass_index,
            label: None,
            raw_fragment: raw_fragment.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.label.is_some()
    }
}

/// All recorded passes for one sample and dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteSet {
    pub sample_id: String,
    pub dimension_key: String,
    pub votes: Vec<Vote>,
    pub requested_passes: u32,
}

impl VoteSet {
    pub fn valid_labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.votes.iter().filter_map(|v| v.label)
    }

    pub fn valid_count(&self) -> u32 {
        self.valid_labels().count() as u32
    }
}

/// Fraction of valid votes that agree with the modal label, kept as exact
/// counts. Equality and ordering compare the ratio, so `2/4 == 1/2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Consistency {
    pub agreeing: u32,
    pub valid: u32,
}

impl Consistency {
    pub fn new(agreeing: u32, valid: u32) -> Self {
        assert!(
            valid > 0 && agreeing <= valid,
            "consistency {agreeing}/{valid}"
        );
        Consistency { agreeing, valid }
    }

    pub fn full() -> Self {
        Consistency::new(1, 1)
    }

    pub fn is_full(&self) -> bool {
        self.agreeing == self.valid
    }

    pub fn as_f64(&self) -> f64 {
        f64::from(self.agreeing) / f64::from(self.valid)
    }

    /// Rebuilds exact counts from a rendered decimal and the valid-vote count.
    pub fn from_decimal(value: f64, valid: u32) -> Option<Self> {
        if valid == 0 || !(0.0..=1.0).contains(&value) {
            return None;
        }
        let agreeing = (value * f64::from(valid)).round() as u32;
        Some(Consistency::new(agreeing.min(valid), valid))
    }
}

impl PartialEq for Consistency {
    fn eq(&self, other: &Self) -> bool {
        u64::from(self.agreeing) * u64::from(other.valid)
            == u64::from(other.agreeing) * u64::from(self.valid)
    }
}

impl Eq for Consistency {}

impl PartialOrd for Consistency {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Consistency {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (u64::from(self.agreeing) * u64::from(other.valid))
            .cmp(&(u64::from(other.agreeing) * u64::from(self.valid)))
    }
}

impl fmt::Display for Consistency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.as_f64())
    }
}

/// Modal label of a vote set together with its consistency score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedAnnotation {
    pub sample_id: String,
    pub dimension_key: String,
    pub label: Label,
    pub consistency: Consistency,
    pub tie: bool,
    pub valid_votes: u32,
}

/// Why a dimension could not be given a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnresolvedReason {
    TooFewValidVotes,
    Tie,
}

/// Outcome of annotating one dimension of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DimensionResult {
    Resolved(AggregatedAnnotation),
    Unresolvable {
        sample_id: String,
        dimension_key: String,
        valid_votes: u32,
        reason: UnresolvedReason,
    },
}

impl DimensionResult {
    pub fn sample_id(&self) -> &str {
        match self {
            DimensionResult::Resolved(a) => &a.sample_id,
            DimensionResult::Unresolvable { sample_id, .. } => sample_id,
        }
    }

    pub fn dimension_key(&self) -> &str {
        match self {
            DimensionResult::Resolved(a) => &a.dimension_key,
            DimensionResult::Unresolvable { dimension_key, .. } => dimension_key,
        }
    }

    pub fn resolved(&self) -> Option<&AggregatedAnnotation> {
        match self {
            DimensionResult::Resolved(a) => Some(a),
            DimensionResult::Unresolvable { .. } => None,
        }
    }

    pub fn valid_votes(&self) -> u32 {
        match self {
            DimensionResult::Resolved(a) => a.valid_votes,
            DimensionResult::Unresolvable { valid_votes, .. } => *valid_votes,
        }
    }
}
