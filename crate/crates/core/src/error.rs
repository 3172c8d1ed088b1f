use std::path::PathBuf;

/// Errors raised across the curation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rejected record: {0}")]
    Rejected(#[from] crate::corpus::RejectReason),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown signal `{0}`")]
    UnknownSignal(String),

    #[error("pipeline order violation: {0}")]
    PipelineOrder(String),

    #[error("plan validation failed: {}", format_violations(.0))]
    Plan(Vec<crate::curriculum::PlanViolation>),

    #[error("phase `{phase}` failed: {source}")]
    Phase {
        phase: String,
        #[source]
        source: Box<Error>,
    },

    #[error("integrity error in {}: {reason}", .path.display())]
    Integrity { path: PathBuf, reason: String },

    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),

    #[error("malformed binary data: {0}")]
    Format(String),

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

fn format_violations(v: &[crate::curriculum::PlanViolation]) -> String {
    v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 1 validation, 2 runtime, 3 integrity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Plan(_) | Error::UnknownSignal(_) => 1,
            Error::Integrity { .. } | Error::MissingArtifacts(_) => 3,
            Error::Phase { source, .. } => match source.exit_code() {
                3 => 3,
                _ => 2,
            },
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
