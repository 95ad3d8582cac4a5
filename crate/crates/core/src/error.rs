use thiserror::Error;

/// Errors raised by environment operations.
#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown context id {id} ({split}) for this environment")]
    UnknownContext { id: usize, split: String },
    #[error("snapshot env kind {snapshot} does not match environment kind {env}")]
    EnvKindMismatch { snapshot: String, env: String },
    #[error("snapshot was not produced by this environment instance: {0}")]
    ForeignSnapshot(String),
    #[error("malformed snapshot blob: {0}")]
    MalformedSnapshot(String),
    #[error("action {action:?} is not among the offered candidates")]
    InvalidAction { action: String },
    #[error("cannot step a finished episode")]
    EpisodeFinished,
    #[error("no active episode; call reset or restore first")]
    NoEpisode,
}

/// Errors raised by generation, training, calibration, and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("task generation infeasible: {0}")]
    Infeasible(String),
    #[error("calibration target {target} unreachable: measured win rate range [{low}, {high}]")]
    CalibrationUnreachable { target: f64, low: f64, high: f64 },
    #[error("calibration did not converge to {target} within {iters} iterations (best {best})")]
    CalibrationDiverged { target: f64, iters: usize, best: f64 },
    #[error("feature schema mismatch: expected version {expected}, got {got}")]
    SchemaMismatch { expected: u32, got: u32 },
    #[error("corrupt training data: {0}")]
    CorruptExample(String),
    #[error("non-finite loss during training: {0}")]
    NonFiniteLoss(String),
    #[error("empty training set: {0}")]
    EmptyTrainingSet(String),
    #[error("expert dataset is empty")]
    EmptyExpertDataset,
    #[error("missing simulation outcome for expert state {state_index} of trajectory {traj_id}")]
    MissingSimulation { traj_id: u64, state_index: usize },
    #[error("unsupported file schema: expected {expected:?}, found {found:?}")]
    FileSchema { expected: String, found: String },
    #[error("parse error at line {line}: {message}")]
    FileParse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    WithContext {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::WithContext {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
