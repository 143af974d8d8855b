use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of bounds: {0}")]
    ParameterBounds(String),
    #[error("diffusion step {step} outside [{min}, {max}]")]
    StepBounds { step: usize, min: usize, max: usize },
    #[error("invalid step sequence: {0}")]
    Sequencing(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("cardinality: {0}")]
    Cardinality(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("step {step} exceeds truncation limit {trunc}")]
    TruncationViolation { step: usize, trunc: usize },
    #[error("scene generation failed after {retries} retries (intent {intent}, seed {seed})")]
    GenerationFailure { intent: String, seed: u64, retries: usize },
    #[error("parse error in record {record}: {reason}")]
    Parse { record: usize, reason: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("non-finite numeric input: {0}")]
    NumericInput(String),
    #[error("non-finite loss at sample {sample}")]
    NumericFailure { sample: usize },
    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by invalid user-supplied values rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        if let Error::InFile { source, .. } = self {
            return source.is_validation();
        }
        matches!(
            self,
            Error::ParameterBounds(_)
                | Error::StepBounds { .. }
                | Error::Sequencing(_)
                | Error::Cardinality(_)
                | Error::Shape(_)
                | Error::TruncationViolation { .. }
                | Error::Config(_)
                | Error::MissingInput(_)
        )
    }
}

/// Attaches the offending file to an error.
pub trait FileContext<T> {
    fn in_file(self, path: &std::path::Path) -> Result<T>;
}

impl<T, E: Into<Error>> FileContext<T> for std::result::Result<T, E> {
    fn in_file(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| Error::InFile { path: path.display().to_string(), source: Box::new(e.into()) })
    }
}
