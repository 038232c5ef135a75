use std::fmt;

/// Pipeline stage a numerical failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Moments,
    Completion,
    TensorLs,
    PowerMethod,
    Assembly,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Moments => "moments",
            Stage::Completion => "completion",
            Stage::TensorLs => "tensor-ls",
            Stage::PowerMethod => "power-method",
            Stage::Assembly => "assembly",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("[{stage}] ill-conditioned: {detail}")]
    IllConditioned { stage: Stage, detail: String },

    #[error("[{stage}] rank deficient: {detail}")]
    RankDeficient { stage: Stage, detail: String },

    #[error("[{stage}] decomposition failed: {detail}")]
    DecompositionFailed { stage: Stage, detail: String },

    #[error("enumeration gate exceeded: {outcomes} outcomes > {limit}")]
    EnumerationGate { outcomes: f64, limit: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for the numerical failures surfaced by the fitting stages.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. }
                | Error::RankDeficient { .. }
                | Error::DecompositionFailed { .. }
        )
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::IllConditioned { stage, .. }
            | Error::RankDeficient { stage, .. }
            | Error::DecompositionFailed { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
