use thiserror::Error;

pub type Result<T> = std::result::Result<T, PqsError>;

#[derive(Debug, Error)]
pub enum PqsError {
    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid state: Bloch norm {norm} exceeds 1")]
    InvalidState { norm: f64 },

    /// Evaluating an ellipse invariant exactly at its pole.
    #[error("singular point: {0}")]
    SingularPoint(String),

    /// The pre- and post-selection have zero joint likelihood.
    #[error("incompatible pre/post-selection{}: {detail}", at_time(*.t))]
    IncompatibleSelection { t: Option<f64>, detail: String },

    #[error("efficiency estimation failed: {0}")]
    EstimationFailed(String),

    #[error("no trajectories accepted by post-selection ({accepted} of {trials}, rate {rate:.3e})")]
    EmptySelection {
        accepted: usize,
        trials: usize,
        rate: f64,
    },

    #[error("record format: {0}")]
    RecordFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at_time(t: Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t = {t} us"),
        None => String::new(),
    }
}

impl PqsError {
    pub(crate) fn incompatible(detail: impl Into<String>) -> Self {
        PqsError::IncompatibleSelection {
            t: None,
            detail: detail.into(),
        }
    }
}
