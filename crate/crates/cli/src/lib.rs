//! Experiment driver behind the `spectral-em` binary.
//!
//! Every subcommand reads a [`RunConfig`], writes its artifacts into the
//! output directory and finishes with `manifest.json`. Paths run in parallel,
//! all writing happens on one thread in path order.
//!
//! | subcommand        | artifacts                                               |
//! |-------------------|---------------------------------------------------------|
//! | `check-lemma`     | `weights.csv`                                           |
//! | `simulate`        | `trajectory.csv`, optionally `increments.csv`           |
//! | `maxreg`          | `report.json`, `contributions.csv`, `moments.csv`       |
//! | `oracle`          | `moments.csv`                                           |
//! | `compare-uniform` | `report.json`                                           |

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;
use std::path::Path;

use serde::Serialize;

pub use commands::{run, Subcommand, Summary};
pub use config::{parse_config, ConfigError, RawConfig, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Numerical { context: String, source: spectral_em::Error },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl RunError {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn numerical(context: impl Into<String>, source: spectral_em::Error) -> Self {
        Self::Numerical { context: context.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical { .. } => 3,
            RunError::Io { .. } => 4,
        }
    }

    /// Machine-readable form printed on failure.
    pub fn to_json(&self, subcommand: Option<&str>) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            key: Option<&'a str>,
            message: String,
        }
        #[derive(Serialize)]
        struct Envelope<'a> {
            #[serde(skip_serializing_if = "Option::is_none")]
            subcommand: Option<&'a str>,
            error: Body<'a>,
        }
        let (kind, key) = match self {
            RunError::Config(ConfigError::Parse(_)) => ("parse", None),
            RunError::Config(ConfigError::Validation { key, .. }) => ("validation", Some(key.as_str())),
            RunError::Numerical { .. } => ("numerical", None),
            RunError::Io { .. } => ("io", None),
        };
        let body = Body { kind, key, message: self.to_string() };
        serde_json::to_string(&Envelope { subcommand, error: body }).expect("error serializes")
    }
}
