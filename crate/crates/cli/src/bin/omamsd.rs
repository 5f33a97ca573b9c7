//! Central daemon.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;
use log::{error, info};
use omams_cli::config::{config_path, Config};
use omams_cli::daemon::Daemon;
use omams_cli::{exit, init_logging, parse_args};

/// Central allocation daemon. Replays the journal, then serves scan units
/// and displays over TCP until interrupted.
#[derive(Parser)]
#[command(name = "omamsd", version)]
struct Args {
    /// Config file; defaults to $OMAMS_CONFIG, then ./omams.toml.
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match parse_args::<Args>() {
        Ok(a) => a,
        Err(code) => return code,
    };
    init_logging();
    let path = config_path(args.config.as_deref());
    let cfg = match Config::load(&path) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(exit::USAGE);
        }
    };
    let daemon = match Daemon::start(&cfg) {
        Ok(d) => d,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    let handler_stop = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || handler_stop.store(true, Ordering::SeqCst)) {
        error!("cannot install interrupt handler: {e}");
        return ExitCode::from(exit::USAGE);
    }
    match daemon.local_addr() {
        Ok(addr) => {
            println!("omamsd listening on {addr}");
            info!("listening on {addr}");
        }
        Err(e) => error!("cannot read listen address: {e}"),
    }
    match daemon.serve(stop) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
