//! Driver library behind the `swlab` binary.

pub mod config;
pub mod report;
pub mod run;
pub mod svg;

pub use config::RunConfig;

use swlab_core::Error;

/// Process exit code for an error: 2 configuration or domain, 3 I/O, 4 numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Io(_) => 3,
        Error::Numeric(_) => 4,
    }
}

/// Exit code of a rerun whose outputs differ from the manifest.
pub const EXIT_MISMATCH: i32 = 5;

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Domain(_) => "domain",
        Error::Io(_) => "io",
        Error::Numeric(_) => "numeric",
    }
}

pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": error_kind(e), "exit_code": exit_code(e), "message": e.to_string() }).to_string()
}
