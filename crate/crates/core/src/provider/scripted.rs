//! Fixture-driven provider.
//!
//! Fixture files are JSONL: `{"match": <key>, "text": <completion>}` where the
//! key is either `<sample_id>#<pass>` or the prompt bundle hash. Per-pass keys
//! take precedence over bundle hashes.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    approx_tokens, CompletionProvider, CompletionRequest, CompletionResult, ProviderError,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub key: String,
    pub text: String,
}

impl ScriptEntry {
    pub fn for_pass(sample_id: &str, pass_index: u32, text: impl Into<String>) -> Self {
        ScriptEntry {
            key: pass_key(sample_id, pass_index),
            text: text.into(),
        }
    }
}

pub(crate) fn pass_key(sample_id: &str, pass_index: u32) -> String {
    format!("{sample_id}#{pass_index}")
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    entries: HashMap<String, String>,
}

impl ScriptedProvider {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, ProviderError> {
        let mut map = HashMap::new();
        for entry in entries {
            if map.insert(entry.key.clone(), entry.text).is_some() {
                return Err(ProviderError::InvalidConfig(format!(
                    "duplicate fixture key {:?}",
                    entry.key
                )));
            }
        }
        Ok(ScriptedProvider { entries: map })
    }

    pub fn parse(content: &str) -> Result<Self, ProviderError> {
        let entries = content
            .lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(idx, line)| {
                serde_json::from_str::<ScriptEntry>(line).map_err(|e| {
                    ProviderError::InvalidConfig(format!("fixture line {}: {e}", idx + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        ScriptedProvider::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let content = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::InvalidConfig(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        ScriptedProvider::parse(&content)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResult, ProviderError> {
        let key = pass_key(request.sample_id, request.pass_index);
        let text = self
            .entries
            .get(&key)
            .or_else(|| self.entries.get(&request.bundle.hash()))
            .ok_or(ProviderError::ScriptMissing(key))?;
        Ok(CompletionResult {
            text: text.clone(),
            input_tokens: approx_tokens(&request.bundle.system_text)
                + approx_tokens(&request.bundle.user_text),
            output_tokens: approx_tokens(text),
            latency_ms: 0,
            attempt_count: 1,
        })
    }

    fn describe(&self) -> String {
        format!("scripted:{} entries", self.entries.len())
    }
}
