//! File formats, presets and the `pairmf` command-line tool built on
//! [`pairmf_core`].

pub mod cli;
pub mod commands;
pub mod format;
pub mod manifest;
pub mod presets;

pub use commands::{run, Status};

/// Process exit code for a finished run.
pub fn exit_code(result: &anyhow::Result<Status>) -> i32 {
    match result {
        Ok(Status::Ok) => 0,
        Ok(Status::NotConverged) => 3,
        Err(_) => 2,
    }
}
