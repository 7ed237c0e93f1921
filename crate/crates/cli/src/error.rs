use annogate::engine::EngineError;
use annogate::eval::EvalError;
use annogate::provider::ProviderError;
use annogate::workflow::WorkflowError;
use annogate::DataError;

/// Stable process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const PROVIDER: u8 = 3;
    pub const GATE: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("directory {0} is not empty; choose a new or empty directory")]
    NonEmptyDirectory(std::path::PathBuf),
    #[error("another annogate command is running against {0}")]
    Locked(std::path::PathBuf),
    #[error(
        "estimated cost {estimate} exceeds the ceiling of {ceiling}; rerun with --yes to proceed"
    )]
    CostCeiling { estimate: String, ceiling: String },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

impl CliError {
    pub fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_)
            | CliError::NonEmptyDirectory(_)
            | CliError::Locked(_)
            | CliError::CostCeiling { .. } => exit::USAGE,
            CliError::Io { .. } | CliError::Data(_) | CliError::Eval(_) => exit::DATA,
            CliError::Provider(e) => provider_code(e),
            CliError::Engine(e) => engine_code(e),
            CliError::Workflow(e) => workflow_code(e),
        }
    }

    /// One-line hint printed under the error.
    pub fn hint(&self) -> Option<&'static str> {
        let workflow = match self {
            CliError::Workflow(e) => e,
            CliError::Engine(EngineError::Interrupted { .. }) => {
                return Some("rerun the same command to resume from the checkpoint")
            }
            CliError::Engine(EngineError::ManifestConflict(_)) => {
                return Some("pick a new --run-id; existing runs are never overwritten")
            }
            CliError::Provider(ProviderError::MissingApiKey(_))
            | CliError::Engine(EngineError::Provider(ProviderError::MissingApiKey(_))) => {
                return Some("export ANNOGATE_API_KEY before annotating with the http provider")
            }
            _ => return None,
        };
        Some(match workflow {
            WorkflowError::HoldoutLeak { .. } => {
                "refinement runs must use `annotate --split refinement`"
            }
            WorkflowError::AlreadyFrozen => {
                "the holdout evaluation is final; start a new project to revise further"
            }
            WorkflowError::StaleCodebook { .. } => {
                "point [codebook] path at the latest version and annotate again"
            }
            WorkflowError::NoRefinement(_) => {
                "annotate and evaluate this version on the refinement split first"
            }
            WorkflowError::UnvalidatedCodebook => {
                "run `annotate --split holdout` and `evaluate --stage holdout` first"
            }
            WorkflowError::VersionConflict(_) => {
                "bump `version` in the codebook file after editing it"
            }
            _ => return None,
        })
    }
}

fn provider_code(_: &ProviderError) -> u8 {
    exit::PROVIDER
}

fn engine_code(e: &EngineError) -> u8 {
    match e {
        EngineError::InvalidConfig(_) | EngineError::ManifestConflict(_) => exit::USAGE,
        EngineError::Provider(p) => provider_code(p),
        EngineError::Interrupted { .. } => exit::PROVIDER,
        EngineError::AlreadyComplete { .. } => exit::OK,
        EngineError::Io { .. } | EngineError::Corrupt { .. } | EngineError::Data(_) => exit::DATA,
    }
}

fn workflow_code(e: &WorkflowError) -> u8 {
    if e.is_gate_violation() {
        return exit::GATE;
    }
    match e {
        WorkflowError::InvalidFraction(_)
        | WorkflowError::InvalidMinConsistency(_)
        | WorkflowError::InvalidThreshold { .. } => exit::USAGE,
        WorkflowError::Engine(inner) => engine_code(inner),
        _ => exit::DATA,
    }
}
