//! Experiment runner for the multi-target sampler: configuration, the
//! benchmark suites, and CSV output.

pub mod config;
pub mod experiments;
pub mod tables;
pub mod zdt3;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: mtsgd::Error,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BenchError {
    pub fn config(line: Option<usize>, message: impl Into<String>) -> Self {
        BenchError::Config {
            line,
            message: message.into(),
        }
    }

    pub fn run(context: impl Into<String>, source: mtsgd::Error) -> Self {
        BenchError::Run {
            context: context.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for numerical failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config { .. } => 2,
            BenchError::Run {
                source: mtsgd::Error::InvalidArgument(_) | mtsgd::Error::DimensionMismatch { .. },
                ..
            } => 2,
            BenchError::Run { .. } => 3,
            BenchError::Io { .. } => 1,
        }
    }
}
