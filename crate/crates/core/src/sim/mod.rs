//! Deterministic discrete-event simulation of scan units talking to the
//! central unit over a slow, lossy GPRS-like link.
//!
//! Time is virtual (microseconds). All randomness comes from a ChaCha8
//! stream seeded with the caller's seed, so a `(scenario, net, seed)`
//! triple always yields the same trace, byte for byte.
//!
//! Link model: one shared uplink (units to central) and one shared
//! downlink, each a FIFO serializer at a fixed bit rate. A frame occupies
//! its link for `bytes * 8 / rate`, is then dropped with `drop_prob` or
//! delivered after a uniform propagation delay, and is delivered a second
//! time (independent delay) with `dup_prob`. Scan units are stop-and-wait:
//! each keeps one scan in flight and retransmits it on an exponential
//! backoff until an ack or reject for it arrives.

pub mod gen;
pub mod oracle;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::central::{Central, CentralError, Notification};
use crate::domain::{BadgeCode, MachineId, ScanEvent, ScanKind, Timestamp, UnitId};
use crate::journal::{parse_journal, JournalRecord};
use crate::protocol::{decode_frame, encode_frame, Decoded, RetryPolicy, WireMessage};
use crate::registry::{Registry, RegistryDoc};
use crate::state::{check_floor_invariants, FloorState, Violation};

pub use gen::{gen_mixed_workload, gen_shift_change, shift_start_ms};
pub use oracle::oracle_run;

pub const GPRS_UPLINK_BPS: u64 = 42_800;
pub const GPRS_DOWNLINK_BPS: u64 = 85_600;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid network config: {0}")]
    InvalidNetConfig(String),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("central unit failed: {0}")]
    Central(#[from] CentralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub drop_prob: f64,
    pub dup_prob: f64,
    pub delay_min_ms: u64,
    pub delay_max_ms: u64,
    pub uplink_bps: u64,
    pub downlink_bps: u64,
}

impl Default for NetConfig {
    /// Lossless, no propagation delay, GPRS rates.
    fn default() -> Self {
        NetConfig {
            drop_prob: 0.0,
            dup_prob: 0.0,
            delay_min_ms: 0,
            delay_max_ms: 0,
            uplink_bps: GPRS_UPLINK_BPS,
            downlink_bps: GPRS_DOWNLINK_BPS,
        }
    }
}

impl NetConfig {
    pub fn lossy(drop_prob: f64, dup_prob: f64, delay_min_ms: u64, delay_max_ms: u64) -> Self {
        NetConfig {
            drop_prob,
            dup_prob,
            delay_min_ms,
            delay_max_ms,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidNetConfig(m.into()));
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return bad("drop_prob outside [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.dup_prob) {
            return bad("dup_prob outside [0, 1]");
        }
        if self.delay_min_ms > self.delay_max_ms {
            return bad("delay_min_ms exceeds delay_max_ms");
        }
        if self.uplink_bps == 0 || self.downlink_bps == 0 {
            return bad("link rates must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenderPolicy {
    /// Retransmit unanswered scans.
    pub retries: bool,
    pub retry: RetryPolicy,
    /// Extra back-to-back copies sent with each first transmission.
    pub extra_copies: u32,
}

impl Default for SenderPolicy {
    fn default() -> Self {
        SenderPolicy {
            retries: true,
            retry: RetryPolicy::default(),
            extra_copies: 0,
        }
    }
}

/// One scripted badge scan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub at_ms: u64,
    pub unit: UnitId,
    pub kind: ScanKind,
    pub badge: BadgeCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine: Option<MachineId>,
}

/// Scenario file: registry inline plus a time-ordered script of scans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub registry: RegistryDoc,
    pub script: Vec<ScriptEntry>,
    /// Virtual-time horizon; defaults to a day past the last scripted scan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

/// A scripted scan with its assigned per-unit sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedScan {
    pub at: Timestamp,
    pub event: ScanEvent,
}

impl Scenario {
    pub fn registry(&self) -> Result<Registry, SimError> {
        Registry::from_doc(self.registry.clone()).map_err(|e| SimError::InvalidScenario(e.to_string()))
    }

    pub fn validate(&self) -> Result<Registry, SimError> {
        let registry = self.registry()?;
        let mut last = 0;
        for (i, e) in self.script.iter().enumerate() {
            if e.at_ms < last {
                return Err(SimError::InvalidScenario(format!("script entry {i} goes back in time")));
            }
            last = e.at_ms;
            if (e.kind == ScanKind::Claim) != e.machine.is_some() {
                return Err(SimError::InvalidScenario(format!(
                    "script entry {i}: machine must be given exactly for claims"
                )));
            }
        }
        Ok(registry)
    }

    /// Script entries as scan events. Each unit numbers its scans 1, 2, ...
    /// in script order.
    pub fn timed_scans(&self) -> Vec<TimedScan> {
        let mut seqs: BTreeMap<&UnitId, u64> = BTreeMap::new();
        self.script
            .iter()
            .map(|e| {
                let seq = seqs.entry(&e.unit).or_insert(0);
                *seq += 1;
                TimedScan {
                    at: Timestamp(e.at_ms),
                    event: ScanEvent {
                        unit_id: e.unit.clone(),
                        unit_seq: *seq,
                        kind: e.kind,
                        badge: e.badge.clone(),
                        machine: e.machine.clone(),
                        unit_time: Timestamp(e.at_ms),
                    },
                }
            })
            .collect()
    }

    fn horizon_us(&self) -> u64 {
        let ms = self.duration_ms.unwrap_or_else(|| {
            self.script.last().map_or(0, |e| e.at_ms) + 24 * 3_600_000
        });
        ms.saturating_mul(1000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "ev")]
pub enum TraceEntry {
    Send { t_us: u64, link: Link, unit: UnitId, seq: u64, bytes: usize, attempt: u32 },
    Drop { t_us: u64, link: Link, unit: UnitId, seq: u64 },
    Duplicate { t_us: u64, link: Link, unit: UnitId, seq: u64 },
    Deliver { t_us: u64, link: Link, unit: UnitId, seq: u64 },
    Apply { t_us: u64, unit: UnitId, seq: u64, journal_seq: Option<u64> },
    Complete { t_us: u64, unit: UnitId, seq: u64, reply: WireMessage },
    Timeout { t_us: u64, unit: UnitId, seq: u64, attempt: u32 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub frames: u64,
    pub bytes: u64,
    /// Total serialization time spent on this link.
    pub busy_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub entries: Vec<TraceEntry>,
    pub final_state: FloorState,
    pub journal: Vec<JournalRecord>,
    /// Journal exactly as the central unit wrote it.
    #[serde(skip)]
    pub journal_bytes: Vec<u8>,
    pub notifications: Vec<Notification>,
    /// Invariant violations seen after any applied event, with the journal seq.
    pub violations: Vec<(u64, Violation)>,
    pub uplink: LinkStats,
    pub downlink: LinkStats,
    /// Scripted scans that never got an answer before the horizon.
    pub unanswered: usize,
    pub finished_us: u64,
}

impl SimTrace {
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("trace entries serialize"));
            out.push('\n');
        }
        out
    }

    /// Time at which the unit received its final answer for each scan.
    pub fn completions(&self) -> impl Iterator<Item = (u64, &UnitId, u64)> {
        self.entries.iter().filter_map(|e| match e {
            TraceEntry::Complete { t_us, unit, seq, .. } => Some((*t_us, unit, *seq)),
            _ => None,
        })
    }

    pub fn applied_records(&self) -> usize {
        self.journal
            .iter()
            .filter(|r| matches!(r.outcome, crate::journal::Outcome::Applied { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    /// A scripted scan becomes available at its unit.
    Wake { unit: usize },
    Timeout { unit: usize, idx: usize, attempt: u32 },
    AtCentral { frame: Vec<u8> },
    AtUnit { unit: usize, frame: Vec<u8> },
}

struct UnitState {
    id: UnitId,
    scans: Vec<TimedScan>,
    next: usize,
    in_flight: Option<(usize, u32)>,
}

struct LinkState {
    rate_bps: u64,
    busy_until: u64,
    stats: LinkStats,
}

impl LinkState {
    /// Serializes a frame; returns the time its last bit leaves the sender.
    fn transmit(&mut self, now: u64, bytes: usize) -> u64 {
        let bits = bytes as u64 * 8;
        let ser = (bits * 1_000_000).div_ceil(self.rate_bps);
        let start = now.max(self.busy_until);
        self.busy_until = start + ser;
        self.stats.frames += 1;
        self.stats.bytes += bytes as u64;
        self.stats.busy_us += ser;
        self.busy_until
    }
}

struct Sim<'a> {
    net: NetConfig,
    sender: SenderPolicy,
    rng: ChaCha8Rng,
    now: u64,
    order: u64,
    queue: BinaryHeap<Reverse<(u64, u64, Event)>>,
    units: Vec<UnitState>,
    unit_index: BTreeMap<UnitId, usize>,
    up: LinkState,
    down: LinkState,
    central: Central<Vec<u8>>,
    trace: Vec<TraceEntry>,
    notifications: Vec<Notification>,
    violations: Vec<(u64, Violation)>,
    _scenario: &'a Scenario,
}

impl Sim<'_> {
    fn schedule(&mut self, at: u64, ev: Event) {
        self.order += 1;
        self.queue.push(Reverse((at, self.order, ev)));
    }

    fn delay_us(&mut self) -> u64 {
        let ms = self.rng.random_range(self.net.delay_min_ms..=self.net.delay_max_ms);
        ms * 1000
    }

    /// Puts a frame on a link and schedules its (possibly duplicated) arrival.
    fn send(&mut self, link: Link, unit: usize, seq: u64, frame: Vec<u8>, attempt: u32) {
        let uid = self.units[unit].id.clone();
        self.trace.push(TraceEntry::Send {
            t_us: self.now,
            link,
            unit: uid.clone(),
            seq,
            bytes: frame.len(),
            attempt,
        });
        let done = match link {
            Link::Up => self.up.transmit(self.now, frame.len()),
            Link::Down => self.down.transmit(self.now, frame.len()),
        };
        if self.rng.random_bool(self.net.drop_prob) {
            self.trace.push(TraceEntry::Drop { t_us: done, link, unit: uid, seq });
            return;
        }
        let copies = if self.rng.random_bool(self.net.dup_prob) {
            self.trace.push(TraceEntry::Duplicate { t_us: done, link, unit: uid, seq });
            2
        } else {
            1
        };
        for _ in 0..copies {
            let at = done + self.delay_us();
            let ev = match link {
                Link::Up => Event::AtCentral { frame: frame.clone() },
                Link::Down => Event::AtUnit { unit, frame: frame.clone() },
            };
            self.schedule(at, ev);
        }
    }

    fn transmit_scan(&mut self, unit: usize, idx: usize, attempt: u32) {
        let scan = self.units[unit].scans[idx].event.clone();
        let frame = encode_frame(&WireMessage::Scan { scan: scan.clone() }).expect("scan frames are small");
        let copies = if attempt == 1 { 1 + self.sender.extra_copies } else { 1 };
        for _ in 0..copies {
            self.send(Link::Up, unit, scan.unit_seq, frame.clone(), attempt);
        }
        if self.sender.retries {
            let wait = self.sender.retry.backoff_ms(attempt) * 1000;
            self.schedule(self.now + wait, Event::Timeout { unit, idx, attempt });
        }
    }

    fn try_start_next(&mut self, unit: usize) {
        let u = &self.units[unit];
        if u.in_flight.is_some() || u.next >= u.scans.len() {
            return;
        }
        if u.scans[u.next].at.millis() * 1000 > self.now {
            return;
        }
        let idx = u.next;
        self.units[unit].next += 1;
        self.units[unit].in_flight = Some((idx, 1));
        self.transmit_scan(unit, idx, 1);
    }

    fn on_central(&mut self, frame: &[u8]) -> Result<(), SimError> {
        let Ok(Decoded::Message { msg: WireMessage::Scan { scan }, .. }) = decode_frame(frame) else {
            return Ok(());
        };
        let unit = self.unit_index[&scan.unit_id];
        self.trace.push(TraceEntry::Deliver {
            t_us: self.now,
            link: Link::Up,
            unit: scan.unit_id.clone(),
            seq: scan.unit_seq,
        });
        let now = self.central.clamp_time(Timestamp(self.now / 1000));
        let d = self.central.handle_scan(&scan, now)?;
        self.trace.push(TraceEntry::Apply {
            t_us: self.now,
            unit: scan.unit_id.clone(),
            seq: scan.unit_seq,
            journal_seq: d.journal_seq,
        });
        if let Some(js) = d.journal_seq {
            for v in check_floor_invariants(self.central.state()) {
                self.violations.push((js, v));
            }
        }
        self.notifications.extend(d.notifications);
        let reply = encode_frame(&d.reply).expect("replies are small");
        self.send(Link::Down, unit, scan.unit_seq, reply, 1);
        Ok(())
    }

    fn on_unit(&mut self, unit: usize, frame: &[u8]) {
        let Ok(Decoded::Message { msg, .. }) = decode_frame(frame) else {
            return;
        };
        let seq = match &msg {
            WireMessage::Ack { unit_seq, .. } | WireMessage::Reject { unit_seq, .. } => *unit_seq,
            _ => return,
        };
        let uid = self.units[unit].id.clone();
        self.trace.push(TraceEntry::Deliver {
            t_us: self.now,
            link: Link::Down,
            unit: uid.clone(),
            seq,
        });
        let Some((idx, _)) = self.units[unit].in_flight else {
            return;
        };
        if self.units[unit].scans[idx].event.unit_seq != seq {
            return;
        }
        self.units[unit].in_flight = None;
        self.trace.push(TraceEntry::Complete {
            t_us: self.now,
            unit: uid,
            seq,
            reply: msg,
        });
        self.try_start_next(unit);
    }

    fn on_timeout(&mut self, unit: usize, idx: usize, attempt: u32) {
        if self.units[unit].in_flight != Some((idx, attempt)) {
            return;
        }
        let seq = self.units[unit].scans[idx].event.unit_seq;
        self.trace.push(TraceEntry::Timeout {
            t_us: self.now,
            unit: self.units[unit].id.clone(),
            seq,
            attempt,
        });
        let next = attempt + 1;
        self.units[unit].in_flight = Some((idx, next));
        self.transmit_scan(unit, idx, next);
    }
}

/// Runs with the default sender policy (retries on, no extra copies).
pub fn run_scenario(scenario: &Scenario, net: &NetConfig, seed: u64) -> Result<SimTrace, SimError> {
    run_scenario_with(scenario, net, &SenderPolicy::default(), seed)
}

pub fn run_scenario_with(
    scenario: &Scenario,
    net: &NetConfig,
    sender: &SenderPolicy,
    seed: u64,
) -> Result<SimTrace, SimError> {
    let registry = scenario.validate()?;
    net.validate()?;

    let mut by_unit: BTreeMap<UnitId, Vec<TimedScan>> = BTreeMap::new();
    for ts in scenario.timed_scans() {
        by_unit.entry(ts.event.unit_id.clone()).or_default().push(ts);
    }
    let units: Vec<UnitState> = by_unit
        .into_iter()
        .map(|(id, scans)| UnitState {
            id,
            scans,
            next: 0,
            in_flight: None,
        })
        .collect();
    let unit_index = units.iter().enumerate().map(|(i, u)| (u.id.clone(), i)).collect();

    let mut sim = Sim {
        net: *net,
        sender: *sender,
        rng: ChaCha8Rng::seed_from_u64(seed),
        now: 0,
        order: 0,
        queue: BinaryHeap::new(),
        units,
        unit_index,
        up: LinkState {
            rate_bps: net.uplink_bps,
            busy_until: 0,
            stats: LinkStats::default(),
        },
        down: LinkState {
            rate_bps: net.downlink_bps,
            busy_until: 0,
            stats: LinkStats::default(),
        },
        central: Central::start(registry, Vec::new(), Timestamp::ZERO)?,
        trace: Vec::new(),
        notifications: Vec::new(),
        violations: Vec::new(),
        _scenario: scenario,
    };

    for u in 0..sim.units.len() {
        let wakes: Vec<u64> = sim.units[u].scans.iter().map(|s| s.at.millis() * 1000).collect();
        for at in wakes {
            sim.schedule(at, Event::Wake { unit: u });
        }
    }

    let horizon = scenario.horizon_us();
    while let Some(Reverse((at, _, ev))) = sim.queue.pop() {
        if at > horizon {
            break;
        }
        sim.now = at;
        match ev {
            Event::Wake { unit } => sim.try_start_next(unit),
            Event::Timeout { unit, idx, attempt } => sim.on_timeout(unit, idx, attempt),
            Event::AtCentral { frame } => sim.on_central(&frame)?,
            Event::AtUnit { unit, frame } => sim.on_unit(unit, &frame),
        }
    }

    let unanswered = sim
        .units
        .iter()
        .map(|u| u.scans.len() - u.next + usize::from(u.in_flight.is_some()))
        .sum();
    let journal_bytes = sim.central.journal().sink().clone();
    let journal = parse_journal(&journal_bytes).expect("central writes a well-formed journal");
    Ok(SimTrace {
        entries: sim.trace,
        final_state: sim.central.state().clone(),
        journal,
        journal_bytes,
        notifications: sim.notifications,
        violations: sim.violations,
        uplink: sim.up.stats,
        downlink: sim.down.stats,
        unanswered,
        finished_us: sim.now,
    })
}
