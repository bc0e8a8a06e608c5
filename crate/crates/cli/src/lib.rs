//! Command-line front end for `stereo-ncc`: alignment runs, timing benches,
//! noise and intensity experiments, and the analog power table.

pub mod commands;
pub mod config;
pub mod table;

use std::path::Path;

pub use config::{Command, Input, RunConfig};

pub type Result<T> = anyhow::Result<T>;

/// Bad flags, bad config values, or anything else the user must fix before
/// running again. Maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_COMPUTATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Exit status for an error: 1 for failed computations, 2 for usage and I/O.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<stereo_ncc::Error>() {
            return match e {
                stereo_ncc::Error::Unalignable(_) | stereo_ncc::Error::UndefinedMetric(_) => EXIT_COMPUTATION,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_COMPUTATION
}

/// One-line diagnostic: the error chain joined by `: `, skipping causes
/// whose text the previous message already ends with.
pub fn diagnostic(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg.replace('\n', " ")
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| stereo_ncc::Error::Io { path: path.to_path_buf(), source })?;
    Ok(())
}
