use thiserror::Error;

/// Errors raised by the pipeline.
///
/// [`Error::is_numerical`] separates numerical failures from configuration and
/// input problems; the CLI maps the two groups to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: expected {expected}, found {found}")]
    GridMismatch { expected: String, found: String },

    #[error("grid size {0} is not congruent to 1 mod 4")]
    NotDownsamplable(usize),

    #[error("attenuation table has no entry for {0} MeV")]
    EnergyMismatch(f64),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("requested {requested} neighbours from a training set of {available}")]
    TooManyNeighbors { requested: usize, available: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("lookup table is not strictly monotone")]
    NonMonotone,

    #[error("reference image has zero norm")]
    ZeroNorm,

    #[error("ground truth has empty support")]
    EmptySupport,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_) | Error::NonFinite(_) | Error::NonMonotone | Error::ZeroNorm | Error::EmptySupport
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
