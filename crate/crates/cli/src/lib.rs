//! IO companion to `paritycal-core`: CSV ingestion and serialization,
//! experiment configuration files, benchmark execution with parallel
//! trials, and report emission (CSV/JSON/SVG).

pub mod config;
pub mod csvio;
pub mod report;
pub mod runner;

use paritycal_core::error::Error as CoreError;

/// Process exit codes of the command-line interface.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_REGIME: i32 = 3;
pub const EXIT_COMPONENT: i32 = 4;

/// Maps an error chain onto the documented exit codes.
pub fn exit_code_for(error: &anyhow::Error) -> i32 {
    for cause in error.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            if is_regime(core) {
                return EXIT_REGIME;
            }
            if matches!(core, CoreError::InvalidConfig(_)) {
                return EXIT_CONFIG;
            }
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return EXIT_CONFIG;
        }
        // A missing input path is a configuration problem, not a
        // component failure.
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return EXIT_CONFIG;
            }
        }
        // csv::Error hides its io source from the error chain.
        if let Some(csv_err) = cause.downcast_ref::<csv::Error>() {
            if let csv::ErrorKind::Io(io) = csv_err.kind() {
                if io.kind() == std::io::ErrorKind::NotFound {
                    return EXIT_CONFIG;
                }
            }
        }
    }
    EXIT_COMPONENT
}

fn is_regime(error: &CoreError) -> bool {
    match error {
        CoreError::RegimeViolation { .. } => true,
        CoreError::MethodFailed { source, .. } | CoreError::GroupMetric { source, .. } => {
            is_regime(source)
        }
        _ => false,
    }
}
