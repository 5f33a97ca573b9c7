//! Read-only board display.

use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use omams_cli::client::watch_boards;
use omams_cli::render::board_text;
use omams_cli::{exit, parse_args};
use omams_core::canonical::to_canonical_string;
use omams_core::protocol::WireMessage;
use omams_core::{UnitId, WorkshopId};

#[derive(Parser)]
#[command(name = "omams-display", version)]
struct Args {
    /// Central daemon address.
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    /// Print the current board and exit.
    #[arg(long)]
    once: bool,
    /// Show only this workshop's machines and queue.
    #[arg(long)]
    workshop: Option<String>,
    /// One JSON board per line.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let args = match parse_args::<Args>() {
        Ok(a) => a,
        Err(code) => return code,
    };
    let workshop = args.workshop.clone().and_then(WorkshopId::try_new);
    let unit = UnitId::new(format!("DISPLAY-{}", std::process::id()));
    let result = watch_boards(&args.addr, &unit, Duration::from_secs(5), |msg| {
        let WireMessage::Board { board } = msg else {
            return true;
        };
        let board = match &workshop {
            Some(ws) => board.for_workshop(ws),
            None => board,
        };
        if args.json {
            println!("{}", to_canonical_string(&board).expect("boards serialize"));
        } else {
            println!("{}", board_text(&board));
        }
        !args.once
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit::USAGE)
        }
    }
}
