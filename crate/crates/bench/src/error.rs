use thiserror::Error;

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] calm_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed artifact: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
    /// A pipeline stage failed; carries the stage name.
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<BenchError>,
    },
}

impl BenchError {
    /// Process exit code: 1 for configuration problems, 2 for runtime and
    /// stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 1,
            BenchError::Core(calm_core::Error::InvalidConfig(_)) => 1,
            BenchError::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Io(e.to_string())
    }
}

/// Tags an error with the stage it came from.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            // Innermost stage wins.
            e @ BenchError::Stage { .. } => e,
            e => BenchError::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}
