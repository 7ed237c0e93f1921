//! Project configuration file (`annogate.toml`).
//!
//! Relative paths are resolved against the directory holding the config file.
//! Unknown keys are rejected so typos fail loudly.

use std::path::{Path, PathBuf};
use std::time::Duration;

use annogate::engine::{RunConfig, TiePolicy};
use annogate::model::CorpusFormat;
use annogate::provider::{ProviderConfig, Usd};
use annogate::workflow::{GateThresholds, DEFAULT_REFINEMENT_FRACTION};
use serde::Deserialize;

use crate::error::CliError;

pub const CONFIG_ENV: &str = "ANNOGATE_CONFIG";
pub const DEFAULT_CONFIG: &str = "annogate.toml";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    /// Workflow state directory (codebooks, splits, runs, ledger, reports).
    #[serde(default = "default_state_dir")]
    pub state_dir: PathBuf,
    pub corpus: CorpusSection,
    pub gold: GoldSection,
    pub codebook: CodebookSection,
    pub provider: ProviderSection,
    #[serde(default)]
    pub run: RunSection,
    pub split: SplitSection,
    #[serde(default)]
    pub thresholds: GateThresholds,
    #[serde(default)]
    pub cost: CostSection,
}

fn default_state_dir() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Jsonl
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSection {
    /// The codebook version to use; older versions stay in `codebooks/`.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Scripted,
    Simulated,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    /// JSONL fixture for the scripted provider.
    pub script: Option<PathBuf>,
    /// Per-vote correctness for the simulated provider.
    pub correctness_probability: Option<f64>,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub requests_per_minute: Option<u32>,
    pub price_per_1k_input_tokens: Option<Usd>,
    pub price_per_1k_output_tokens: Option<Usd>,
    pub initial_backoff_secs: Option<f64>,
    pub max_backoff_secs: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub passes: Option<u32>,
    pub temperature: Option<f64>,
    pub min_valid_votes: Option<u32>,
    pub tie_policy: Option<TiePolicy>,
    pub concurrency_limit: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "default_fraction")]
    pub refinement_fraction: f64,
    /// Required: reproducibility over convenience.
    pub seed: u64,
}

fn default_fraction() -> f64 {
    DEFAULT_REFINEMENT_FRACTION
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    /// Runs estimated above this need `--yes`.
    pub ceiling_usd: Usd,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            ceiling_usd: Usd::from_decimal("10").expect("literal"),
        }
    }
}

fn secs(value: f64, field: &str) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(value).map_err(|_| {
        CliError::Config(format!(
            "provider.{field} must be a non-negative number of seconds"
        ))
    })
}

/// Command-line overrides; flags win over the file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub passes: Option<u32>,
    pub temperature: Option<f64>,
    pub concurrency: Option<usize>,
}

impl ProjectConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut config: ProjectConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.state_dir);
        resolve(&mut config.corpus.path);
        resolve(&mut config.gold.path);
        resolve(&mut config.codebook.path);
        if let Some(script) = config.provider.script.as_mut() {
            resolve(script);
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ProjectConfig::parse(&text, &base)
    }

    /// `--config`, then `ANNOGATE_CONFIG`, then `./annogate.toml`.
    pub fn locate(flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG))
    }

    /// Checks every referenced input file and value range, reporting all
    /// problems at once.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        let mut need = |label: &str, path: &Path| {
            if !path.is_file() {
                problems.push(format!("{label} not found: {}", path.display()));
            }
        };
        need("corpus", &self.corpus.path);
        need("gold labels", &self.gold.path);
        need("codebook", &self.codebook.path);
        match (self.provider.kind, &self.provider.script) {
            (ProviderKind::Scripted, Some(script)) => need("provider script", script),
            (ProviderKind::Scripted, None) => {
                problems.push("provider.script is required for kind = \"scripted\"".into())
            }
            _ => {}
        }
        if let Some(p) = self.provider.correctness_probability {
            if !(0.0..=1.0).contains(&p) {
                problems.push(format!(
                    "provider.correctness_probability must be in [0, 1], got {p}"
                ));
            }
        }
        if !(self.split.refinement_fraction > 0.0 && self.split.refinement_fraction < 1.0) {
            problems.push(format!(
                "split.refinement_fraction must be in (0, 1), got {}",
                self.split.refinement_fraction
            ));
        }
        if let Err(e) = self.thresholds.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self
            .run_config(&RunOverrides::default())
            .and_then(|_| self.provider_config(0.6).map(|_| ()))
        {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "invalid project config:\n  {}",
                problems.join("\n  ")
            )))
        }
    }

    pub fn run_config(&self, overrides: &RunOverrides) -> Result<RunConfig, CliError> {
        let defaults = RunConfig::default();
        let passes = overrides
            .passes
            .or(self.run.passes)
            .unwrap_or(defaults.passes);
        let config = RunConfig {
            passes,
            temperature: overrides
                .temperature
                .or(self.run.temperature)
                .unwrap_or(defaults.temperature),
            min_valid_votes: self.run.min_valid_votes.unwrap_or(passes.div_ceil(2)),
            tie_policy: self.run.tie_policy.unwrap_or(defaults.tie_policy),
            concurrency_limit: overrides
                .concurrency
                .or(self.run.concurrency_limit)
                .unwrap_or(defaults.concurrency_limit),
            seed: self.run.seed,
        };
        config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    /// Provider settings; the sampling temperature comes from the run config.
    pub fn provider_config(&self, temperature: f64) -> Result<ProviderConfig, CliError> {
        let p = &self.provider;
        let d = ProviderConfig::default();
        let config = ProviderConfig {
            endpoint_url: p.endpoint_url.clone().unwrap_or(d.endpoint_url),
            model_name: p.model_name.clone().unwrap_or(d.model_name),
            temperature,
            timeout: p
                .timeout_secs
                .map(|s| secs(s, "timeout_secs"))
                .transpose()?
                .unwrap_or(d.timeout),
            max_retries: p.max_retries.unwrap_or(d.max_retries),
            requests_per_minute: p.requests_per_minute.unwrap_or(d.requests_per_minute),
            price_per_1k_input_tokens: p
                .price_per_1k_input_tokens
                .unwrap_or(d.price_per_1k_input_tokens),
            price_per_1k_output_tokens: p
                .price_per_1k_output_tokens
                .unwrap_or(d.price_per_1k_output_tokens),
            initial_backoff: p
                .initial_backoff_secs
                .map(|s| secs(s, "initial_backoff_secs"))
                .transpose()?
                .unwrap_or(d.initial_backoff),
            max_backoff: p
                .max_backoff_secs
                .map(|s| secs(s, "max_backoff_secs"))
                .transpose()?
                .unwrap_or(d.max_backoff),
        };
        config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }
}

/// Written by `annogate init`.
pub const TEMPLATE: &str = r#"# annogate project configuration.
# Relative paths are resolved against this file's directory.

# Where codebooks/, splits/, runs/, ledger.json and reports/ live.
state_dir = "."

[corpus]
# JSONL with {"id", "text", "metadata"} per line, or CSV with id,text columns.
path = "data/corpus.jsonl"
format = "jsonl"

[gold]
# CSV: sample_id, one 0/1 column per dimension key, optional annotator_ids.
path = "data/gold.csv"

[codebook]
# Bump `version` inside the file (and set parent_version) for each revision.
path = "codebooks/v1.md"

[provider]
# http | scripted | simulated
kind = "http"
endpoint_url = "https://api.openai.com/v1"
model_name = "gpt-4"
# The API key is read from ANNOGATE_API_KEY.
timeout_secs = 60
max_retries = 5
requests_per_minute = 60
price_per_1k_input_tokens = "0.03"
price_per_1k_output_tokens = "0.06"
# script = "fixtures/script.jsonl"      # kind = "scripted"
# correctness_probability = 0.8         # kind = "simulated"

[run]
passes = 7
temperature = 0.6
# min_valid_votes = 4
tie_policy = "negative"
concurrency_limit = 4
# seed = 1                              # offline providers only

[split]
refinement_fraction = 0.25
seed = 42

# Minimum metric values per dimension; no defaults on purpose.
[thresholds]
# f1 = 0.7
# precision = 0.5

[cost]
# Runs estimated above this ceiling require --yes.
ceiling_usd = "10"
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parses_and_lists_missing_files() {
        let config = ProjectConfig::parse(TEMPLATE, Path::new("/nonexistent")).unwrap();
        assert_eq!(
            config.corpus.path,
            Path::new("/nonexistent/data/corpus.jsonl")
        );
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("corpus not found"));
        assert!(err.contains("gold labels not found"));
        assert!(err.contains("codebook not found"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = TEMPLATE.replace("passes = 7", "pases = 7");
        let err = ProjectConfig::parse(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("pases"));
    }

    #[test]
    fn flags_win() {
        let config = ProjectConfig::parse(TEMPLATE, Path::new(".")).unwrap();
        let run = config
            .run_config(&RunOverrides {
                passes: Some(9),
                temperature: Some(0.3),
                concurrency: None,
            })
            .unwrap();
        assert_eq!(run.passes, 9);
        assert_eq!(run.temperature, 0.3);
        assert_eq!(run.min_valid_votes, 5);
        assert_eq!(
            config.provider_config(run.temperature).unwrap().temperature,
            0.3
        );
    }

    #[test]
    fn floors_enforced_from_file() {
        let text = TEMPLATE.replace("passes = 7", "passes = 2");
        let config = ProjectConfig::parse(&text, Path::new(".")).unwrap();
        assert!(config.run_config(&RunOverrides::default()).is_err());
    }
}
