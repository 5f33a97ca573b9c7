//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any failed.

use std::collections::{BTreeMap, VecDeque};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use omams_core::canonical::to_canonical_string;
use omams_core::domain::{MachineStatus, OperatorStatus};
use omams_core::journal::report::{
    allocated_time_by_operator, busy_time_by_machine, format_hours, utilization_report, work_hours_report, Window,
    MS_PER_HOUR,
};
use omams_core::journal::{recover, replay, JournalEvent};
use omams_core::protocol::{encode_frame, WireMessage, SCAN_FRAME_BUDGET};
use omams_core::registry::{MachineEntry, OperatorEntry, RegistryDoc};
use omams_core::sim::gen::SCAN_OUT_UNIT;
use omams_core::sim::{
    gen_mixed_workload, gen_shift_change, oracle_run, run_scenario, run_scenario_with, shift_start_ms, Link, NetConfig,
    Scenario, ScriptEntry, SenderPolicy, SimTrace, TraceEntry, GPRS_DOWNLINK_BPS, GPRS_UPLINK_BPS,
};
use omams_core::{
    check_floor_invariants, parse_badge_code, AckOutcome, Central, MachineId, Registry, ScanEvent, ScanKind,
    Timestamp, Transition, UnitId, WorkshopId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WALKTHROUGH_MAX: Duration = Duration::from_secs(1);
const LOSSY_SCENARIOS: u64 = 1_000;
const LOSSY_SUITE_MAX: Duration = Duration::from_secs(60);
const LIVE_EVENTS: usize = 10_000;
const TRUNCATIONS_PER_JOURNAL: usize = 100;
const SHIFT_CHANGE_MAX_US: u64 = 15_000_000;
/// Scan frames in a 100-operator shift change: one out and one in each.
const SHIFT_CHANGE_FRAMES: u64 = 200;
/// Paper's quoted peak GPRS uplink rate, in kbps.
const PAPER_UPLINK_KBPS: f64 = 42.8;
/// 200 frames x 256 bytes x 8 bits / 42,800 bps, in seconds.
const DERIVED_SERIALIZATION_BOUND_S: f64 = 9.57;
const HOURS_TOLERANCE: f64 = 1e-9;
const UTILIZATION_TOLERANCE: f64 = 1e-9;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn lossy_net() -> NetConfig {
    NetConfig::lossy(0.2, 0.2, 0, 2_000)
}

/// Check-in order of badges in the script.
fn check_in_rank(sc: &Scenario) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (i, e) in sc.script.iter().enumerate() {
        if e.kind == ScanKind::CheckIn {
            out.entry(e.badge.as_str().to_string()).or_insert(i);
        }
    }
    out
}

fn shift_change_walkthrough() -> Outcome {
    let started = Instant::now();
    let sc = gen_shift_change(10, 12, 10, 1).expect("valid counts");
    let net = NetConfig::default();
    let trace = match run_scenario(&sc, &net, 1) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("simulation failed: {e}")),
    };
    let st = &trace.final_state;
    let oracle = oracle_run(&sc).expect("valid scenario");
    if st.without_times() != oracle.without_times() {
        return outcome(false, "state after shift change differs from oracle");
    }
    let allocated = st.allocated_count();
    let queue: Vec<_> = st.waiting.values().flatten().cloned().collect();
    if allocated != 10 || queue.len() != 2 {
        return outcome(false, format!("{allocated} allocated, {} waiting; want 10 and 2", queue.len()));
    }
    let rank = check_in_rank(&sc);
    if !queue.windows(2).all(|w| rank[w[0].as_str()] < rank[w[1].as_str()]) {
        return outcome(false, "waiting list is not in check-in order");
    }

    // two more operators leave
    let mut sc2 = sc.clone();
    let mut at = sc.script.last().map_or(0, |e| e.at_ms);
    let leavers: Vec<_> = ["M01", "M02"]
        .iter()
        .map(|m| match &st.machines[&MachineId::new(*m)].status {
            MachineStatus::Allocated { operator, .. } => operator.clone(),
            MachineStatus::Vacant => unreachable!("all machines are allocated"),
        })
        .collect();
    for op in &leavers {
        at += 1_000;
        sc2.script.push(ScriptEntry {
            at_ms: at,
            unit: UnitId::new(SCAN_OUT_UNIT),
            kind: ScanKind::CheckOut,
            badge: op.clone(),
            machine: None,
        });
    }
    let trace2 = match run_scenario(&sc2, &net, 1) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("simulation failed: {e}")),
    };
    let handed: Vec<_> = trace2.journal[trace2.journal.len() - 2..]
        .iter()
        .map(|r| match r.transition() {
            Some(Transition::CheckedOut { handed_to, .. }) => handed_to.clone(),
            _ => None,
        })
        .collect();
    let heads: Vec<_> = queue.iter().cloned().map(Some).collect();
    if handed != heads {
        return outcome(false, format!("hand-offs went to {handed:?}, queue heads were {heads:?}"));
    }
    let st2 = &trace2.final_state;
    if st2.waiting_count() != 0 || st2.allocated_count() != 10 {
        return outcome(false, "queue not drained after two check-outs");
    }
    if st2.without_times() != oracle_run(&sc2).expect("valid").without_times() {
        return outcome(false, "state after check-outs differs from oracle");
    }
    let elapsed = started.elapsed();
    outcome(
        elapsed < WALKTHROUGH_MAX,
        format!(
            "10 allocated, 2 waiting in check-in order, hand-offs to queue heads, oracle match; {:.3}s (< {}s)",
            elapsed.as_secs_f64(),
            WALKTHROUGH_MAX.as_secs()
        ),
    )
}

struct LossyRun {
    scenario: Scenario,
    registry: Registry,
    trace: SimTrace,
}

fn lossy_runs() -> (Vec<LossyRun>, Duration) {
    let started = Instant::now();
    let runs = (0..LOSSY_SCENARIOS)
        .map(|seed| {
            let scenario = gen_mixed_workload(seed);
            let registry = scenario.validate().expect("generated scenarios are valid");
            let trace = run_scenario(&scenario, &lossy_net(), seed).expect("simulation runs");
            LossyRun {
                scenario,
                registry,
                trace,
            }
        })
        .collect();
    (runs, started.elapsed())
}

fn oracle_equivalence(runs: &[LossyRun], elapsed: Duration) -> Outcome {
    let mut matched = 0;
    let mut first_bad = None;
    for (seed, run) in runs.iter().enumerate() {
        let oracle = oracle_run(&run.scenario).expect("valid");
        let ok = run.trace.unanswered == 0
            && run.trace.violations.is_empty()
            && run.trace.final_state.without_times() == oracle.without_times();
        if ok {
            matched += 1;
        } else if first_bad.is_none() {
            first_bad = Some(seed);
        }
    }
    let total = runs.len();
    let mut detail = format!(
        "{matched}/{total} lossy runs match the oracle (drop 0.2, dup 0.2, delay 0-2000 ms); {:.1}s (< {}s)",
        elapsed.as_secs_f64(),
        LOSSY_SUITE_MAX.as_secs()
    );
    if let Some(seed) = first_bad {
        detail.push_str(&format!("; first mismatch at seed {seed}"));
    }
    outcome(matched == total && elapsed < LOSSY_SUITE_MAX, detail)
}

fn live_invariants() -> Outcome {
    let workshops = ["W1", "W2", "W3"];
    let doc = RegistryDoc {
        workshops: workshops.iter().map(|w| WorkshopId::new(*w)).collect(),
        machines: (0..12)
            .map(|i| MachineEntry {
                id: MachineId::new(format!("M{i:02}")),
                workshop: WorkshopId::new(workshops[i % 3]),
            })
            .collect(),
        operators: (0..40)
            .map(|i| OperatorEntry {
                badge: parse_badge_code(&format!("OP{i:04}")).unwrap(),
                name: format!("op{i}"),
                workshop: WorkshopId::new(workshops[i % 3]),
                active: true,
            })
            .collect(),
    };
    let registry = Registry::from_doc(doc.clone()).expect("valid registry");
    let machine_count = doc.machines.len();
    let mut central = Central::start(registry.clone(), Vec::new(), Timestamp::ZERO).expect("starts");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let unit = UnitId::new("LIVE");
    // independent view of each workshop queue, built from transitions
    let mut model: BTreeMap<WorkshopId, VecDeque<String>> = BTreeMap::new();
    let mut fifo_breaks = 0;
    let mut conservation_breaks = 0;
    let mut violations = 0;

    for i in 0..LIVE_EVENTS {
        let op = &doc.operators[rng.random_range(0..doc.operators.len())];
        let seq = i as u64 + 1;
        let t = Timestamp(seq * 1_000);
        let ev = match rng.random_range(0..10) {
            0..5 => ScanEvent::check_in(&unit, seq, op.badge.clone(), t),
            5..9 => ScanEvent::check_out(&unit, seq, op.badge.clone(), t),
            _ => {
                let m = &doc.machines[rng.random_range(0..machine_count)].id;
                ScanEvent::claim(&unit, seq, op.badge.clone(), m.clone(), t)
            }
        };
        let d = central.handle_scan(&ev, t).expect("live apply");
        let st = central.state();
        violations += check_floor_invariants(st).len();
        let held = st
            .operators
            .values()
            .filter(|s| matches!(s, OperatorStatus::Allocated { .. }))
            .count();
        if st.allocated_count() + st.vacant_count() != machine_count || held != st.allocated_count() {
            conservation_breaks += 1;
        }
        if let WireMessage::Ack {
            outcome: AckOutcome::Applied(tr),
            ..
        } = &d.reply
        {
            match tr {
                Transition::Queued {
                    operator,
                    workshop,
                    position,
                } => {
                    let q = model.entry(workshop.clone()).or_default();
                    q.push_back(operator.as_str().to_string());
                    if *position != q.len() {
                        fifo_breaks += 1;
                    }
                }
                Transition::CheckedOut {
                    machine,
                    handed_to: Some(next),
                    ..
                } => {
                    let ws = &registry.machines()[machine];
                    let head = model.get_mut(ws).and_then(VecDeque::pop_front);
                    if head.as_deref() != Some(next.as_str()) {
                        fifo_breaks += 1;
                    }
                }
                Transition::LeftQueue { operator, .. } | Transition::Claimed { operator, .. } => {
                    for q in model.values_mut() {
                        q.retain(|o| o != operator.as_str());
                    }
                }
                _ => {}
            }
        }
        for (ws, q) in &model {
            let live: Vec<&str> = st.waiting.get(ws).map_or(Vec::new(), |q| q.iter().map(|o| o.as_str()).collect());
            if live != q.iter().map(String::as_str).collect::<Vec<_>>() {
                fifo_breaks += 1;
            }
        }
    }
    outcome(
        violations == 0 && fifo_breaks == 0 && conservation_breaks == 0,
        format!(
            "{LIVE_EVENTS} live events: {violations} invariant violations, {conservation_breaks} conservation breaks, {fifo_breaks} FIFO breaks"
        ),
    )
}

fn replay_determinism(runs: &[LossyRun]) -> Outcome {
    let mut replay_mismatch = 0;
    let mut bad_prefix = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for run in runs {
        let records = &run.trace.journal;
        let live = to_canonical_string(&run.trace.final_state).expect("serializes");
        match replay(records, &run.registry) {
            Ok(st) if to_canonical_string(&st).expect("serializes") == live => {}
            _ => replay_mismatch += 1,
        }

        let bytes = &run.trace.journal_bytes;
        let mut line_ends = vec![0];
        line_ends.extend(bytes.iter().enumerate().filter(|(_, b)| **b == b'\n').map(|(i, _)| i + 1));
        for _ in 0..TRUNCATIONS_PER_JOURNAL {
            let cut = rng.random_range(0..=bytes.len());
            let r = recover(&bytes[..cut]);
            let whole = line_ends.iter().filter(|&&e| e <= cut).count() - 1;
            let ok = r.records.len() == whole
                && r.records[..] == records[..whole]
                && r.valid_len == line_ends[whole]
                && r.corruption.as_ref().is_none_or(|c| c.at_tail)
                && replay(&r.records, &run.registry).is_ok();
            if !ok {
                bad_prefix += 1;
            }
        }
    }
    outcome(
        replay_mismatch == 0 && bad_prefix == 0,
        format!(
            "{} journals replay byte-identical ({replay_mismatch} mismatches); {} truncations, {bad_prefix} without a valid prefix",
            runs.len(),
            runs.len() * TRUNCATIONS_PER_JOURNAL
        ),
    )
}

fn idempotency() -> Outcome {
    let doubled = NetConfig::lossy(0.0, 1.0, 0, 0);
    let resend = SenderPolicy {
        extra_copies: 1,
        ..Default::default()
    };
    let mut scenarios: Vec<Scenario> = (0..LOSSY_SCENARIOS).map(gen_mixed_workload).collect();
    scenarios.push(gen_shift_change(10, 12, 10, 1).expect("valid"));
    let mut differing = 0;
    for (seed, sc) in scenarios.iter().enumerate() {
        let once = run_scenario(sc, &NetConfig::default(), seed as u64).expect("runs");
        let many = run_scenario_with(sc, &doubled, &resend, seed as u64).expect("runs");
        if once.final_state.without_times() != many.final_state.without_times()
            || once.applied_records() != many.applied_records()
            || once.journal.len() != many.journal.len()
        {
            differing += 1;
        }
    }
    outcome(
        differing == 0,
        format!(
            "{} scenarios with every frame sent twice and duplicated in flight: {differing} differ from single delivery",
            scenarios.len()
        ),
    )
}

fn link_budget(runs: &[LossyRun]) -> Outcome {
    let derived = (SHIFT_CHANGE_FRAMES * SCAN_FRAME_BUDGET as u64 * 8) as f64 / GPRS_UPLINK_BPS as f64;
    let rates_ok = (GPRS_UPLINK_BPS as f64 / 1000.0 - PAPER_UPLINK_KBPS).abs() < 1e-9
        && GPRS_DOWNLINK_BPS == 2 * GPRS_UPLINK_BPS
        && (derived - DERIVED_SERIALIZATION_BOUND_S).abs() < 0.005;

    // worst-case scan: longest badge and claim target used by the tools
    let widest = WireMessage::Scan {
        scan: ScanEvent::claim(
            &UnitId::new("SCAN-OUT-WORKSHOP-99"),
            u64::MAX,
            parse_badge_code("ABCDEFGHIJKL").unwrap(),
            MachineId::new("MACHINE-0000000001"),
            Timestamp(u64::MAX),
        ),
    };
    let widest_len = encode_frame(&widest).expect("encodes").len();

    let sc = gen_shift_change(100, 100, 100, 6).expect("valid");
    let trace = run_scenario(&sc, &NetConfig::default(), 6).expect("runs");
    let mut largest = 0;
    for t in runs.iter().map(|r| &r.trace).chain([&trace]) {
        for e in &t.entries {
            if let TraceEntry::Send {
                link: Link::Up, bytes, ..
            } = e
            {
                largest = largest.max(*bytes);
            }
        }
    }
    let start_us = shift_start_ms(100) * 1000;
    let shift_frames = sc.script.iter().filter(|e| e.at_ms * 1000 >= start_us).count() as u64;
    let done_us = trace.completions().map(|(t, _, _)| t).max().unwrap_or(0);
    let span = done_us.saturating_sub(start_us);

    // same shift change with every scan scripted at the same instant
    let mut burst = sc.clone();
    for e in burst.script.iter_mut().filter(|e| e.at_ms * 1000 >= start_us) {
        e.at_ms = start_us / 1000;
    }
    let btrace = run_scenario(&burst, &NetConfig::default(), 6).expect("runs");
    let bspan = btrace.completions().map(|(t, _, _)| t).max().unwrap_or(0).saturating_sub(start_us);

    let passed = rates_ok
        && widest_len <= SCAN_FRAME_BUDGET
        && largest <= SCAN_FRAME_BUDGET
        && shift_frames == SHIFT_CHANGE_FRAMES
        && trace.unanswered == 0
        && btrace.unanswered == 0
        && span < SHIFT_CHANGE_MAX_US
        && bspan < SHIFT_CHANGE_MAX_US;
    outcome(
        passed,
        format!(
            "largest scan frame {largest} B, widest possible {widest_len} B (<= {SCAN_FRAME_BUDGET}); \
             {shift_frames}-frame shift change done in {:.2}s paced, {:.2}s burst (< 15s; bound {derived:.2}s)",
            span as f64 / 1e6,
            bspan as f64 / 1e6
        ),
    )
}

fn reports(runs: &[LossyRun]) -> Outcome {
    let h = |n: u64| Timestamp(n * MS_PER_HOUR);
    let doc = RegistryDoc {
        workshops: vec![WorkshopId::new("W1")],
        machines: vec![
            MachineEntry {
                id: MachineId::new("M01"),
                workshop: WorkshopId::new("W1"),
            },
            MachineEntry {
                id: MachineId::new("M02"),
                workshop: WorkshopId::new("W1"),
            },
        ],
        operators: ["A24564", "B11111"]
            .iter()
            .map(|b| OperatorEntry {
                badge: parse_badge_code(b).unwrap(),
                name: b.to_lowercase(),
                workshop: WorkshopId::new("W1"),
                active: true,
            })
            .collect(),
    };
    let registry = Registry::from_doc(doc).expect("valid");
    let mut c = Central::start(registry, Vec::new(), h(0)).expect("starts");
    let unit = UnitId::new("U1");
    let a = parse_badge_code("A24564").unwrap();
    let b = parse_badge_code("B11111").unwrap();
    // A works M01 08:00-16:00; B takes M02 from 09:00 to 15:00
    c.handle_scan(&ScanEvent::check_in(&unit, 1, a.clone(), h(8)), h(8)).unwrap();
    c.handle_scan(&ScanEvent::check_in(&unit, 2, b.clone(), h(9)), h(9)).unwrap();
    c.handle_scan(&ScanEvent::check_out(&unit, 3, b, h(15)), h(15)).unwrap();
    c.handle_scan(&ScanEvent::check_out(&unit, 4, a.clone(), h(16)), h(16)).unwrap();
    let records = omams_core::journal::parse_journal(c.journal().sink()).expect("parses");

    let day = Window::new(h(0), h(24)).unwrap();
    let hours = work_hours_report(&records, &a, day);
    let hours_ok = hours.total_hours() == "8.000"
        && (hours.total_ms as f64 / MS_PER_HOUR as f64 - 8.0).abs() < HOURS_TOLERANCE
        && hours.sessions.len() == 1;
    let shift = Window::new(h(8), h(16)).unwrap();
    let util = utilization_report(&records, &MachineId::new("M02"), shift).expect("known machine");
    let util_ok = (util.utilization - 0.75).abs() < UTILIZATION_TOLERANCE
        && format!("{:.3}", util.utilization) == "0.750"
        && format_hours(util.busy_ms) == "6.000";

    let mut unbalanced = 0;
    for run in runs {
        let end = run.trace.journal.last().map_or(1, |r| r.central_time.0 + 1);
        let w = Window::new(Timestamp::ZERO, Timestamp(end)).unwrap();
        let machines: u64 = busy_time_by_machine(&run.trace.journal, w).values().sum();
        let operators: u64 = allocated_time_by_operator(&run.trace.journal, w).values().sum();
        let marks = run
            .trace
            .journal
            .iter()
            .filter(|r| matches!(r.event, JournalEvent::Admin(_)))
            .count();
        if machines != operators || marks == 0 {
            unbalanced += 1;
        }
    }
    outcome(
        hours_ok && util_ok && unbalanced == 0,
        format!(
            "work hours {} h, utilization {:.3}; double entry holds on {}/{} journals",
            hours.total_hours(),
            util.utilization,
            runs.len() - unbalanced,
            runs.len()
        ),
    )
}

fn main() -> ExitCode {
    let (runs, lossy_elapsed) = lossy_runs();
    let results = [
        ("1 shift-change walkthrough", shift_change_walkthrough()),
        ("2 oracle equivalence under loss", oracle_equivalence(&runs, lossy_elapsed)),
        ("3 live invariants", live_invariants()),
        ("4 replay determinism", replay_determinism(&runs)),
        ("5 idempotent redelivery", idempotency()),
        ("6 link budget", link_budget(&runs)),
        ("7 reports", reports(&runs)),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{name}] {}", o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
