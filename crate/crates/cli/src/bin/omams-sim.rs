//! Runs scenario files through the network simulation and compares the
//! outcome with the reference model.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args as ClapArgs, Parser, Subcommand};
use omams_cli::{exit, parse_args};
use omams_core::protocol::RetryPolicy;
use omams_core::sim::{
    gen_mixed_workload, gen_shift_change, oracle_run, run_scenario_with, NetConfig, Scenario, SenderPolicy,
    GPRS_DOWNLINK_BPS, GPRS_UPLINK_BPS,
};

#[derive(Parser)]
#[command(name = "omams-sim", version)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario file and print PASS or FAIL against the oracle.
    Run(RunArgs),
    /// Print a generated scenario as JSON.
    #[command(subcommand)]
    Gen(Gen),
}

#[derive(ClapArgs)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
    #[arg(long, default_value_t = 0.0)]
    dup: f64,
    #[arg(long, default_value_t = 0)]
    delay_min: u64,
    #[arg(long, default_value_t = 0)]
    delay_max: u64,
    #[arg(long, default_value_t = GPRS_UPLINK_BPS)]
    uplink_bps: u64,
    #[arg(long, default_value_t = GPRS_DOWNLINK_BPS)]
    downlink_bps: u64,
    /// Disable sender retransmission.
    #[arg(long)]
    no_retries: bool,
    /// Write the event trace as JSON Lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print a JSON summary instead of a PASS/FAIL line.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Gen {
    /// Shift change on one workshop.
    ShiftChange {
        #[arg(long)]
        machines: usize,
        #[arg(long)]
        incoming: usize,
        #[arg(long)]
        outgoing: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Random two-workshop traffic.
    Mixed {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
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
    match args.cmd {
        Cmd::Gen(g) => {
            let sc = match g {
                Gen::ShiftChange {
                    machines,
                    incoming,
                    outgoing,
                    seed,
                } => match gen_shift_change(machines, incoming, outgoing, seed) {
                    Ok(s) => s,
                    Err(e) => return fail(exit::USAGE, e),
                },
                Gen::Mixed { seed } => gen_mixed_workload(seed),
            };
            println!("{}", serde_json::to_string_pretty(&sc).expect("scenarios serialize"));
            ExitCode::SUCCESS
        }
        Cmd::Run(r) => run(r),
    }
}

fn run(r: RunArgs) -> ExitCode {
    let text = match fs::read_to_string(&r.scenario) {
        Ok(t) => t,
        Err(e) => return fail(exit::USAGE, format!("cannot read {}: {e}", r.scenario.display())),
    };
    let scenario: Scenario = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(e) => return fail(exit::USAGE, format!("invalid scenario: {e}")),
    };
    let net = NetConfig {
        drop_prob: r.drop,
        dup_prob: r.dup,
        delay_min_ms: r.delay_min,
        delay_max_ms: r.delay_max,
        uplink_bps: r.uplink_bps,
        downlink_bps: r.downlink_bps,
    };
    let sender = SenderPolicy {
        retries: !r.no_retries,
        retry: RetryPolicy::default(),
        extra_copies: 0,
    };
    let oracle = match oracle_run(&scenario) {
        Ok(o) => o,
        Err(e) => return fail(exit::USAGE, e),
    };
    let trace = match run_scenario_with(&scenario, &net, &sender, r.seed) {
        Ok(t) => t,
        Err(e) => return fail(exit::USAGE, e),
    };
    if let Some(path) = &r.trace {
        if let Err(e) = fs::write(path, trace.to_json_lines()) {
            return fail(exit::USAGE, format!("cannot write {}: {e}", path.display()));
        }
    }
    let pass = trace.final_state.without_times() == oracle.without_times() && trace.violations.is_empty();
    let verdict = if pass { "PASS" } else { "FAIL" };
    if r.json {
        let summary = serde_json::json!({
            "verdict": verdict,
            "seed": r.seed,
            "scans": scenario.script.len(),
            "unanswered": trace.unanswered,
            "journal_records": trace.journal.len(),
            "violations": trace.violations.len(),
            "finished_us": trace.finished_us,
            "uplink": trace.uplink,
            "downlink": trace.downlink,
        });
        println!("{summary}");
    } else {
        println!(
            "{verdict} seed={} scans={} unanswered={} journal={} violations={} finished={:.3}s",
            r.seed,
            scenario.script.len(),
            trace.unanswered,
            trace.journal.len(),
            trace.violations.len(),
            trace.finished_us as f64 / 1e6
        );
    }
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(exit::REJECTED)
    }
}
