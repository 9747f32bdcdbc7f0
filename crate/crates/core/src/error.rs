use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, found {found}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("parameter vector is bound to a different model spec")]
    SpecMismatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("sampling rate {rate} selects no samples from a pool of {pool}; use a larger rate")]
    RateTooSmall { rate: f64, pool: usize },
    #[error("no credible set or objective for visible task {0}")]
    MissingTask(usize),
    #[error("fine-tuned model for task {task} reached accuracy {accuracy:.4}, below floor {floor:.4}")]
    AccuracyFloor { task: usize, accuracy: f64, floor: f64 },
}
