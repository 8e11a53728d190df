use std::fmt;
use std::path::Path;

use tuckerwatch::pipeline::{Stage, StageError};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INGEST: u8 = 3;
pub const EXIT_DECOMPOSITION: u8 = 4;
pub const EXIT_CLUSTERING: u8 = 5;
pub const EXIT_IO: u8 = 6;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn missing(path: &Path, producer: &str) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("missing intermediate {} (run `{producer}` first)", path.display()),
        }
    }

    pub fn stage(stage: Stage, err: impl fmt::Display) -> Self {
        let code = match stage {
            Stage::Ingest => EXIT_INGEST,
            Stage::Decompose | Stage::Rank | Stage::Trajectories => EXIT_DECOMPOSITION,
            Stage::Cluster | Stage::Events => EXIT_CLUSTERING,
        };
        Self {
            code,
            message: format!("{} stage failed: {err}", stage.name()),
        }
    }
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        Self::stage(e.stage, e.source)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
