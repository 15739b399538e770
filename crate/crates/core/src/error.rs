use alloc::string::String;

/// Unified error type for every fallible operation in the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("calibrator for group {0} was never fitted")]
    UnknownGroup(usize),
    #[error("this calibrator routes by group; supply a group id")]
    GroupRequired,
    #[error("metric error for group {group}: {source}")]
    GroupMetric {
        group: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("group data read at stage {stage} is not permitted in regime {regime}")]
    RegimeViolation { stage: String, regime: String },
    #[error("method {method}, trial {trial}: {source}")]
    MethodFailed {
        method: String,
        trial: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn fit_failed(msg: impl Into<String>) -> Self {
        Error::FitFailed(msg.into())
    }

    /// Annotates a metric error with the group it occurred in.
    pub fn for_group(self, group: usize) -> Self {
        Error::GroupMetric {
            group,
            source: alloc::boxed::Box::new(self),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
