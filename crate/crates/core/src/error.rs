use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("quaternion norm {0} is not 1 within tolerance")]
    NonUnitQuaternion(f64),
    #[error("symmetry index {0} outside 0..4")]
    InvalidSymmetryIndex(u8),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("episode already finished; call reset first")]
    EpisodeFinished,
    #[error("no episode in progress; call reset first")]
    NoEpisode,
    #[error("invalid box spec `{name}`: {reason}")]
    InvalidBox { name: String, reason: String },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("backward called without a forward cache")]
    MissingCache,
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("no demonstrations supplied")]
    EmptyDemos,
    #[error("no successful demonstration after {attempts} attempts")]
    DemoGenerationFailed { attempts: usize },
    #[error("non-finite {what} at env step {step}")]
    NonFinite { what: String, step: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("reports cover different scenarios: {0}")]
    MismatchedScenarios(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
