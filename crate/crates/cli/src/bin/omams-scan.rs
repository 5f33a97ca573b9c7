//! Scan-unit emulator: sends one badge scan and prints the outcome.

use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use omams_cli::client::send_scan;
use omams_cli::render::outcome_line;
use omams_cli::{exit, parse_args};
use omams_core::protocol::{encode_payload, RetryPolicy, WireMessage};
use omams_core::{BadgeCode, MachineId, ScanEvent, Timestamp, UnitId};

#[derive(Parser)]
#[command(name = "omams-scan", version)]
struct Args {
    /// Central daemon address.
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    /// Scan unit id.
    #[arg(long, default_value = "SCAN-IN")]
    unit: String,
    /// Unit sequence number; defaults to the current epoch microseconds.
    #[arg(long)]
    seq: Option<u64>,
    /// Connection attempts before giving up.
    #[arg(long, default_value_t = 3)]
    attempts: u32,
    /// Seconds to wait for each reply.
    #[arg(long, default_value_t = 5)]
    timeout: u64,
    /// Print the reply message as JSON.
    #[arg(long)]
    json: bool,
    #[command(subcommand)]
    scan: Scan,
}

#[derive(Subcommand)]
enum Scan {
    /// Check in.
    In { badge: BadgeCode },
    /// Check out.
    Out { badge: BadgeCode },
    /// Claim a vacant machine while waiting.
    Claim { badge: BadgeCode, machine: String },
}

fn main() -> ExitCode {
    let args = match parse_args::<Args>() {
        Ok(a) => a,
        Err(code) => return code,
    };
    let Some(unit) = UnitId::try_new(args.unit.clone()) else {
        eprintln!("error: unit id must not be empty");
        return ExitCode::from(exit::USAGE);
    };
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let seq = args.seq.unwrap_or(now.as_micros() as u64).max(1);
    let at = Timestamp(now.as_millis() as u64);
    let event = match args.scan {
        Scan::In { badge } => ScanEvent::check_in(&unit, seq, badge, at),
        Scan::Out { badge } => ScanEvent::check_out(&unit, seq, badge, at),
        Scan::Claim { badge, machine } => {
            let Some(machine) = MachineId::try_new(machine) else {
                eprintln!("error: machine id must not be empty");
                return ExitCode::from(exit::USAGE);
            };
            ScanEvent::claim(&unit, seq, badge, machine, at)
        }
    };
    let timeout = Duration::from_secs(args.timeout.max(1));
    match send_scan(&args.addr, &event, args.attempts, RetryPolicy::default(), timeout) {
        Ok(reply) => {
            if args.json {
                println!("{}", encode_payload(&reply));
            } else {
                println!("{}", outcome_line(&reply));
            }
            match reply {
                WireMessage::Reject { .. } => ExitCode::from(exit::REJECTED),
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit::USAGE)
        }
    }
}
