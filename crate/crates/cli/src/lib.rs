//! Shared plumbing for the OMAMS binaries: daemon, scan and display
//! clients, config loading and terminal rendering.

pub mod client;
pub mod config;
pub mod daemon;
pub mod render;

use std::process::ExitCode;

use chrono::DateTime;
use clap::Parser;
use omams_core::Timestamp;

/// Exit codes shared by all binaries.
pub mod exit {
    pub const OK: u8 = 0;
    /// Bad arguments, bad config, or the central unit could not be reached.
    pub const USAGE: u8 = 1;
    /// Journal corrupt or unwritable.
    pub const JOURNAL: u8 = 2;
    /// Scan rejected, or simulation diverged from the oracle.
    pub const REJECTED: u8 = 3;
    pub const UNKNOWN_MACHINE: u8 = 4;
}

/// Parses arguments; usage errors exit with code 1 rather than clap's 2,
/// which is reserved for journal corruption.
pub fn parse_args<T: Parser>() -> Result<T, ExitCode> {
    T::try_parse().map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            ExitCode::from(exit::USAGE)
        } else {
            ExitCode::SUCCESS
        }
    })
}

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
}

/// A point in time given as epoch milliseconds or RFC 3339.
pub fn parse_time(s: &str) -> Result<Timestamp, String> {
    if let Ok(ms) = s.parse::<u64>() {
        return Ok(Timestamp(ms));
    }
    let t = DateTime::parse_from_rfc3339(s).map_err(|e| format!("{s:?} is neither epoch ms nor RFC 3339: {e}"))?;
    u64::try_from(t.timestamp_millis())
        .map(Timestamp)
        .map_err(|_| format!("{s:?} is before 1970"))
}
