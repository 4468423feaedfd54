use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("perturbation `{perturbation}` is not valid for task `{task}`: {reason}")]
    InvalidPerturbation {
        task: String,
        perturbation: String,
        reason: String,
    },

    #[error("non-finite feedback force {0:?}")]
    NonFiniteForce(Vec<f64>),

    #[error("simulation diverged at t = {t:.4} s")]
    Diverged { t: f64 },

    #[error(
        "expert `{expert}` produced only {succeeded}/{wanted} successful demos on `{env}` \
         within {attempts} attempts"
    )]
    ExpertBudget {
        expert: String,
        env: String,
        succeeded: usize,
        wanted: usize,
        attempts: usize,
    },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("trajectory has no force channel")]
    MissingForce,

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
