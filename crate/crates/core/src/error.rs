use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Each variant maps onto a stable machine-readable code (see [`Error::code`]) so the
/// command line front end can print one-line diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unmapped source label(s): {}", .0.join(", "))]
    UnmappedLabel(Vec<String>),

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("model not trained")]
    Untrained,

    #[error("topology mismatch: {}", .0.join("; "))]
    Topology(Vec<String>),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Format(_) => "E_FORMAT",
            Error::UnsupportedCodec(_) => "E_CODEC",
            Error::Config(_) => "E_CONFIG",
            Error::Shape(_) => "E_SHAPE",
            Error::InvalidInput(_) => "E_INPUT",
            Error::UnmappedLabel(_) => "E_UNMAPPED_LABEL",
            Error::DegenerateCalibration(_) => "E_CALIBRATION",
            Error::Untrained => "E_UNTRAINED",
            Error::Topology(_) => "E_TOPOLOGY",
            Error::Unsupported(_) => "E_UNSUPPORTED",
            Error::Numerical(_) => "E_NUMERICAL",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
            Error::Csv(_) => "E_CSV",
        }
    }

    /// Whether the error stems from bad user input (as opposed to a failure while running).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::UnsupportedCodec(_)
                | Error::Config(_)
                | Error::Shape(_)
                | Error::InvalidInput(_)
                | Error::UnmappedLabel(_)
                | Error::Topology(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
