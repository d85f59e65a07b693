use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{}:{line}:{column}: {message}", path.display())]
    ConfigParse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot import {}: {message}", path.display())]
    Import { path: PathBuf, message: String },

    #[error(transparent)]
    Model(#[from] obukhov_core::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for configuration and file problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        use obukhov_core::Error as E;
        match self {
            LabError::ConfigParse { .. }
            | LabError::Config(_)
            | LabError::Io { .. }
            | LabError::Import { .. } => 2,
            LabError::Model(e) => match e {
                E::ParameterOutOfRange(_)
                | E::Overflow { .. }
                | E::DimensionMismatch { .. }
                | E::FormMismatch { .. }
                | E::SpanMismatch(_)
                | E::InvalidConfig(_) => 2,
                E::StepSizeCollapse { .. }
                | E::NonFiniteState { .. }
                | E::MaxSteps { .. }
                | E::AmplificationBudgetExceeded { .. }
                | E::EmptyTrajectory => 3,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_config_from_numerics() {
        assert_eq!(LabError::Config("x".into()).exit_code(), 2);
        let collapse = obukhov_core::Error::StepSizeCollapse { t: 0.0, step: 1e-300 };
        assert_eq!(LabError::from(collapse).exit_code(), 3);
        let range = obukhov_core::Error::ParameterOutOfRange("b".into());
        assert_eq!(LabError::from(range).exit_code(), 2);
    }

    #[test]
    fn parse_errors_carry_their_position() {
        let e = LabError::ConfigParse {
            path: "a.json".into(),
            line: 3,
            column: 7,
            message: "unknown field".into(),
        };
        assert_eq!(e.to_string(), "a.json:3:7: unknown field");
    }
}
