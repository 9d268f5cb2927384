use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid price {value} for asset `{asset}` on {date}")]
    InvalidPrice {
        asset: String,
        date: NaiveDate,
        value: f64,
    },

    #[error("asset `{asset}` is missing its first value on {date}; nothing to forward-fill from")]
    LeadingGap { asset: String, date: NaiveDate },

    #[error("asset `{asset}` has zero variance {context}")]
    ZeroVariance { asset: String, context: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("computation failed: {0}")]
    Computation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True when the error stems from bad input rather than from a numerical
    /// stage failing on valid input.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Computation(_) | Error::ZeroVariance { .. })
    }
}
