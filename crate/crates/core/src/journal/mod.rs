//! Append-only audit journal.
//!
//! One JSON object per line, fields in the fixed order `seq`,
//! `central_time`, `event`, `outcome`. Sequence numbers are dense from 1.
//! A record is written (and synced, for files) before the matching ack
//! leaves the central unit, so the floor state can always be rebuilt by
//! folding the journal.

pub mod report;

use std::fs::File;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{self, RejectReason, Transition, VerifiedScan};
use crate::domain::{ScanEvent, ScanKind, Timestamp, WorkshopId};
use crate::registry::{MachineEntry, Registry, Unauthorized};
use crate::state::FloorState;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("sequence gap: expected {expected}, got {got}")]
    SeqGap { expected: u64, got: u64 },
    #[error("record {seq} has central_time {time} before previous {previous}")]
    TimeRegression {
        seq: u64,
        time: Timestamp,
        previous: Timestamp,
    },
    #[error("journal storage failure: {0}")]
    Storage(#[from] io::Error),
    #[error("corrupt journal record at seq {seq}: {detail}")]
    CorruptRecord { seq: u64, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdminKind {
    Startup,
    RegistryReload,
}

/// Non-scan journal line. Carries the machine layout in force so that
/// reports can be produced from the journal alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdminMark {
    pub kind: AdminKind,
    pub machines: Vec<MachineEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JournalEvent {
    Scan(ScanEvent),
    Admin(AdminMark),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Applied { transition: Transition },
    Rejected { reason: RejectReason },
    DuplicateAck,
}

/// A record before it has been assigned its journal sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalEntry {
    pub central_time: Timestamp,
    pub event: JournalEvent,
    pub outcome: Outcome,
}

impl JournalEntry {
    pub fn into_record(self, seq: u64) -> JournalRecord {
        JournalRecord {
            seq,
            central_time: self.central_time,
            event: self.event,
            outcome: self.outcome,
        }
    }

    pub fn admin(kind: AdminKind, registry: &Registry, now: Timestamp) -> Self {
        JournalEntry {
            central_time: now,
            event: JournalEvent::Admin(AdminMark {
                kind,
                machines: registry.to_doc().machines,
            }),
            outcome: Outcome::Applied {
                transition: Transition::Noted,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JournalRecord {
    pub seq: u64,
    pub central_time: Timestamp,
    pub event: JournalEvent,
    pub outcome: Outcome,
}

impl JournalRecord {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("journal records always serialize");
        line.push('\n');
        line
    }

    pub fn transition(&self) -> Option<&Transition> {
        match &self.outcome {
            Outcome::Applied { transition } => Some(transition),
            _ => None,
        }
    }
}

/// Byte sink a journal can be written to.
pub trait JournalSink: Write {
    fn sync(&mut self) -> io::Result<()> {
        self.flush()
    }
}

impl JournalSink for Vec<u8> {}

impl JournalSink for File {
    fn sync(&mut self) -> io::Result<()> {
        self.sync_data()
    }
}

pub struct Journal<S> {
    sink: S,
    last_seq: u64,
    last_time: Timestamp,
}

impl<S: JournalSink> Journal<S> {
    pub fn new(sink: S) -> Self {
        Self::resume(sink, 0, Timestamp::ZERO)
    }

    /// Continues after an existing valid prefix ending at `last_seq`.
    pub fn resume(sink: S, last_seq: u64, last_time: Timestamp) -> Self {
        Journal {
            sink,
            last_seq,
            last_time,
        }
    }

    pub fn next_seq(&self) -> u64 {
        self.last_seq + 1
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Writes and syncs one record. Returns its sequence number.
    pub fn append(&mut self, record: &JournalRecord) -> Result<u64, JournalError> {
        if record.seq != self.next_seq() {
            return Err(JournalError::SeqGap {
                expected: self.next_seq(),
                got: record.seq,
            });
        }
        if record.central_time < self.last_time {
            return Err(JournalError::TimeRegression {
                seq: record.seq,
                time: record.central_time,
                previous: self.last_time,
            });
        }
        self.sink.write_all(record.to_line().as_bytes())?;
        self.sink.sync()?;
        self.last_seq = record.seq;
        self.last_time = record.central_time;
        Ok(record.seq)
    }

    pub fn append_entry(&mut self, entry: JournalEntry) -> Result<u64, JournalError> {
        let record = entry.into_record(self.next_seq());
        self.append(&record)
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }
}

/// Where a journal stops being readable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    /// Sequence number the first unreadable line should have carried.
    pub seq: u64,
    /// Byte offset where the unreadable line starts.
    pub offset: usize,
    /// True when nothing readable follows, i.e. the file was cut short.
    pub at_tail: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovered {
    pub records: Vec<JournalRecord>,
    /// Length in bytes of the valid prefix.
    pub valid_len: usize,
    pub corruption: Option<Corruption>,
}

/// Reads the longest valid prefix. A final line without a newline is
/// treated as torn even if it happens to parse.
pub fn recover(bytes: &[u8]) -> Recovered {
    let mut records: Vec<JournalRecord> = Vec::new();
    let mut offset = 0;
    let mut last_time = Timestamp::ZERO;
    while offset < bytes.len() {
        let expected = records.len() as u64 + 1;
        let rest = &bytes[offset..];
        let corrupt = |detail: String| Corruption {
            seq: expected,
            offset,
            at_tail: !rest.iter().position(|&b| b == b'\n').is_some_and(|nl| {
                rest[nl + 1..].iter().any(|b| !b.is_ascii_whitespace())
            }),
            detail,
        };
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Recovered {
                records,
                valid_len: offset,
                corruption: Some(corrupt("incomplete final line".into())),
            };
        };
        let parsed = serde_json::from_slice::<JournalRecord>(&rest[..nl])
            .map_err(|e| e.to_string())
            .and_then(|r| {
                if r.seq != expected {
                    Err(format!("expected seq {expected}, found {}", r.seq))
                } else if r.central_time < last_time {
                    Err(format!("central_time {} goes backwards", r.central_time))
                } else {
                    Ok(r)
                }
            });
        match parsed {
            Ok(r) => {
                last_time = r.central_time;
                records.push(r);
                offset += nl + 1;
            }
            Err(detail) => {
                return Recovered {
                    records,
                    valid_len: offset,
                    corruption: Some(corrupt(detail)),
                }
            }
        }
    }
    Recovered {
        records,
        valid_len: offset,
        corruption: None,
    }
}

/// Strict read: any unreadable line is an error.
pub fn parse_journal(bytes: &[u8]) -> Result<Vec<JournalRecord>, JournalError> {
    let rec = recover(bytes);
    match rec.corruption {
        None => Ok(rec.records),
        Some(c) => Err(JournalError::CorruptRecord {
            seq: c.seq,
            detail: c.detail,
        }),
    }
}

/// Incremental fold of journal records back into floor state.
pub struct Replayer {
    registry: Registry,
    state: FloorState,
    next_seq: u64,
}

impl Replayer {
    pub fn new(registry: &Registry) -> Self {
        Replayer {
            state: FloorState::new(
                registry
                    .machines()
                    .iter()
                    .map(|(m, w)| (m.clone(), w.clone())),
            ),
            registry: registry.clone(),
            next_seq: 1,
        }
    }

    pub fn state(&self) -> &FloorState {
        &self.state
    }

    pub fn into_state(self) -> FloorState {
        self.state
    }

    /// Re-applies one record and checks the allocator reaches the same outcome.
    pub fn apply(&mut self, rec: &JournalRecord) -> Result<(), JournalError> {
        let corrupt = |detail: String| JournalError::CorruptRecord {
            seq: rec.seq,
            detail,
        };
        if rec.seq != self.next_seq {
            return Err(corrupt(format!("expected seq {}", self.next_seq)));
        }
        self.next_seq += 1;

        let ev = match &rec.event {
            JournalEvent::Admin(mark) => {
                let layout: Vec<_> = mark.machines.iter().map(|m| (&m.id, &m.workshop)).collect();
                let current: Vec<_> = self.state.machines.iter().map(|(id, s)| (id, &s.workshop)).collect();
                if layout != current {
                    return Err(corrupt("machine layout differs from registry".into()));
                }
                return Ok(());
            }
            JournalEvent::Scan(ev) => ev,
        };

        let effects = match &rec.outcome {
            Outcome::DuplicateAck => return Ok(()),
            Outcome::Rejected {
                reason: RejectReason::UnknownBadge,
            } => allocator::reject_unverified_mut(&mut self.state, ev, Unauthorized::UnknownBadge, rec.central_time),
            Outcome::Rejected {
                reason: RejectReason::Inactive,
            } => allocator::reject_unverified_mut(&mut self.state, ev, Unauthorized::Inactive, rec.central_time),
            outcome => {
                let workshop = self.check_in_workshop(ev, outcome);
                let scan = VerifiedScan {
                    event: ev.clone(),
                    workshop,
                };
                allocator::apply_event_mut(&mut self.state, &scan, rec.central_time)
            }
        }
        .map_err(|e| corrupt(e.to_string()))?;

        let replayed = effects.iter().find_map(|e| match e {
            allocator::Effect::JournalAppend(entry) => Some(&entry.outcome),
            _ => None,
        });
        match replayed {
            Some(o) if o == &rec.outcome => Ok(()),
            Some(o) => Err(corrupt(format!("replay produced {o:?}"))),
            None => Err(corrupt("scan was already applied".into())),
        }
    }

    /// Workshop a check-in was allotted in; taken from the recorded outcome
    /// so that replay does not depend on later registry edits.
    fn check_in_workshop(&self, ev: &ScanEvent, outcome: &Outcome) -> WorkshopId {
        let from_outcome = match outcome {
            Outcome::Applied {
                transition: Transition::Queued { workshop, .. },
            } => Some(workshop.clone()),
            Outcome::Applied {
                transition: Transition::Allotted { machine, .. },
            } if ev.kind == ScanKind::CheckIn => {
                self.state.machines.get(machine).map(|s| s.workshop.clone())
            }
            _ => None,
        };
        from_outcome
            .or_else(|| self.registry.get(&ev.badge).map(|r| r.home_workshop.clone()))
            .unwrap_or_else(|| WorkshopId::new("?"))
    }
}

/// Rebuilds the floor state a journal describes.
pub fn replay(records: &[JournalRecord], registry: &Registry) -> Result<FloorState, JournalError> {
    let mut r = Replayer::new(registry);
    for rec in records {
        r.apply(rec)?;
    }
    Ok(r.into_state())
}
