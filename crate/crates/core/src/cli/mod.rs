//! Configuration, manifests and the experiment commands of the `mvflow` tool.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    cmd_diagnose, cmd_report, cmd_run, cmd_sweep, cmd_wsu, cmd_ym_build, cmd_ym_validate, CommandReport,
    SweepParameter,
};
pub use config::{parse_config, parse_config_str, RunConfig};
pub use manifest::RunManifest;

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_ASSERTION: i32 = 3;

/// Exit code for a command error: configuration problems are validation
/// failures, everything else is a runtime failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Config(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}
