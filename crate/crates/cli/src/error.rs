use std::path::PathBuf;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] twostream_core::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing input {0}")]
    MissingInput(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("output directory {dir} is locked; remove {lock} if no other run is active")]
    Locked { dir: PathBuf, lock: PathBuf },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Config(_) => "config",
            CliError::MissingInput(_) => "missing-input",
            CliError::Dataset(_) => "dataset",
            CliError::Locked { .. } => "lock",
            CliError::Io { .. } => "io",
        }
    }

    /// Process exit status for this error; 2 is left to argument parsing.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 3,
            "missing-input" => 4,
            "io" => 5,
            "parse" => 6,
            "dataset" => 7,
            "geometry" => 8,
            "invalid-input" => 9,
            "render" => 10,
            "prune" => 11,
            "training" => 12,
            "model" => 13,
            "eval" => 14,
            "lock" => 15,
            _ => 1,
        }
    }
}
