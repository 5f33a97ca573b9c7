//! Work-hours and utilization reports from a journal file.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use omams_cli::render::{hours_text, utilization_text};
use omams_cli::{exit, parse_args, parse_time};
use omams_core::journal::recover;
use omams_core::journal::report::{
    utilization_report, work_hours_report, write_hours_csv, write_utilization_csv, ReportError, Window,
};
use omams_core::{BadgeCode, MachineId, Timestamp};

#[derive(Parser)]
#[command(name = "omams-report", version)]
struct Args {
    /// Journal file (JSON Lines).
    #[arg(long)]
    journal: PathBuf,
    /// Window start, epoch ms or RFC 3339; defaults to the first record.
    #[arg(long, value_parser = parse_time)]
    from: Option<Timestamp>,
    /// Window end (exclusive), epoch ms or RFC 3339; defaults to just after the last record.
    #[arg(long, value_parser = parse_time)]
    to: Option<Timestamp>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Shorthand for --format json.
    #[arg(long)]
    json: bool,
    #[command(subcommand)]
    report: Report,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
    Json,
}

#[derive(Subcommand)]
enum Report {
    /// On-site sessions and total hours of one operator.
    Hours { operator: BadgeCode },
    /// Busy fraction and allocation segments of one machine.
    Utilization { machine: String },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = match parse_args::<Args>() {
        Ok(a) => a,
        Err(code) => return code,
    };
    let bytes = match std::fs::read(&args.journal) {
        Ok(b) => b,
        Err(e) => return fail(exit::USAGE, format!("cannot read {}: {e}", args.journal.display())),
    };
    let recovered = recover(&bytes);
    if let Some(c) = &recovered.corruption {
        if !c.at_tail {
            return fail(exit::JOURNAL, format!("journal corrupt at seq {}: {}", c.seq, c.detail));
        }
        eprintln!("warning: ignoring torn final record at byte {}", c.offset);
    }
    let records = recovered.records;
    let first = records.first().map_or(Timestamp::ZERO, |r| r.central_time);
    let last = records.last().map_or(Timestamp::ZERO, |r| r.central_time);
    let start = args.from.unwrap_or(first);
    let end = args.to.unwrap_or(Timestamp(last.0.max(start.0) + 1));
    let window = match Window::new(start, end) {
        Ok(w) => w,
        Err(e) => return fail(exit::USAGE, e),
    };
    let format = if args.json { Format::Json } else { args.format };

    let mut out = io::stdout().lock();
    let written = match args.report {
        Report::Hours { operator } => {
            let r = work_hours_report(&records, &operator, window);
            match format {
                Format::Csv => write_hours_csv(&r, &mut out),
                Format::Table => write!(out, "{}", hours_text(&r)).map_err(|e| ReportError::Csv(e.into())),
                Format::Json => json(&mut out, &r),
            }
        }
        Report::Utilization { machine } => {
            let Some(machine) = MachineId::try_new(machine) else {
                return fail(exit::USAGE, "machine id must not be empty");
            };
            let r = match utilization_report(&records, &machine, window) {
                Ok(r) => r,
                Err(e @ ReportError::UnknownMachine(_)) => return fail(exit::UNKNOWN_MACHINE, e),
                Err(e) => return fail(exit::USAGE, e),
            };
            match format {
                Format::Csv => write_utilization_csv(&r, &mut out),
                Format::Table => write!(out, "{}", utilization_text(&r)).map_err(|e| ReportError::Csv(e.into())),
                Format::Json => json(&mut out, &r),
            }
        }
    };
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(exit::USAGE, e),
    }
}

fn json<T: serde::Serialize>(out: &mut impl Write, value: &T) -> Result<(), ReportError> {
    let text = serde_json::to_string(value).map_err(|e| ReportError::Csv(io::Error::from(e).into()))?;
    writeln!(out, "{text}").map_err(|e| ReportError::Csv(e.into()))
}
