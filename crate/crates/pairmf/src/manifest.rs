//! Run manifests: a JSON record written next to every set of outputs,
//! complete enough to re-run the command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cli::Command;
use crate::format::{read_json, write_json, FormatError};

pub const SCHEMA: &str = "pairmf-manifest/1";
/// Bumped whenever a CSV column is added, removed or renamed.
pub const CSV_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub command: String,
    pub config: Command,
    pub git_describe: String,
    pub seeds: Vec<u64>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<PathBuf>,
    pub csv_schema: u32,
}

impl Manifest {
    pub fn new(config: &Command, seeds: Vec<u64>, wall_clock_seconds: f64, outputs: Vec<PathBuf>) -> Self {
        Manifest {
            schema: SCHEMA.into(),
            command: config.name().into(),
            config: config.clone(),
            git_describe: env!("PAIRMF_GIT_DESCRIBE").into(),
            seeds,
            wall_clock_seconds,
            outputs,
            csv_schema: CSV_SCHEMA,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        read_json(path)
    }
}
