use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value produced by `{op}`")]
    NonFiniteValue { op: &'static str },

    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),

    #[error("could not parse program: {0}")]
    ProgramSyntax(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidTau(f64),

    #[error("no training covariate carries kernel weight at the query point")]
    EmptyNeighborhood,

    #[error("acceptance-rejection stalled after {0} consecutive rejections")]
    AcceptanceStall(u64),

    #[error("sample sizes differ: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("assignment problem of size {size} exceeds the solver budget {budget}")]
    BudgetExceeded { size: usize, budget: usize },

    #[error("ring density is undefined at the origin")]
    SingularOrigin,

    #[error("parse error at row {row}, column \"{column}\": {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("gradient check failed: relative error {max_rel_error:e} exceeds {tol:e}")]
    GradientMismatch { max_rel_error: f64, tol: f64 },

    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by malformed inputs or configuration rather than numerics.
    /// The underlying error, with fold annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFold { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_config_error(&self) -> bool {
        matches!(
            self.root(),
            Error::InvalidConfig(_)
                | Error::InvalidTau(_)
                | Error::UnsupportedPrimitive(_)
                | Error::ProgramSyntax(_)
                | Error::Json(_)
        )
    }

    pub fn is_data_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Parse { .. }
                | Error::EmptyDataset
                | Error::Csv(_)
                | Error::Io(_)
                | Error::CorruptModel(_)
                | Error::DimensionMismatch { .. }
                | Error::SizeMismatch { .. }
        )
    }
}
