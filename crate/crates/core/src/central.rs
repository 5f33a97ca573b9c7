//! The central unit: verifies badges, drives the allocator, writes the
//! journal ahead of every reply, and remembers replies so retransmitted
//! scans get the answer they originally earned.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{self, AckOutcome, AllocError, Effect, VerifiedScan};
use crate::domain::{OperatorId, ScanEvent, Timestamp, UnitId};
use crate::journal::{AdminKind, Journal, JournalEntry, JournalError, JournalEvent, JournalRecord, JournalSink, Outcome, Replayer};
use crate::protocol::{DedupeLedger, Delivery, WireMessage};
use crate::registry::Registry;
use crate::state::{DisplayBoard, FloorState};

#[derive(Debug, Error)]
pub enum CentralError {
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Clock(#[from] AllocError),
    #[error("registry reload changes the machine layout")]
    LayoutChanged,
}

/// Message destined for the SMS outbox / operator display.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub time: Timestamp,
    pub operator: OperatorId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    /// Ack or reject for the sending unit.
    pub reply: WireMessage,
    /// New board, when the floor changed.
    pub board: Option<DisplayBoard>,
    pub notifications: Vec<Notification>,
    /// Journal sequence written for this scan; `None` for duplicates.
    pub journal_seq: Option<u64>,
}

pub struct Central<S> {
    registry: Registry,
    state: FloorState,
    journal: Journal<S>,
    ledger: DedupeLedger,
    replies: HashMap<(UnitId, u64), WireMessage>,
    board: DisplayBoard,
}

fn reply_for(rec: &JournalRecord) -> Option<((UnitId, u64), WireMessage)> {
    let JournalEvent::Scan(ev) = &rec.event else {
        return None;
    };
    let msg = match &rec.outcome {
        Outcome::Applied { transition } => WireMessage::Ack {
            unit_id: ev.unit_id.clone(),
            unit_seq: ev.unit_seq,
            outcome: AckOutcome::Applied(transition.clone()),
        },
        Outcome::Rejected { reason } => WireMessage::Reject {
            unit_id: ev.unit_id.clone(),
            unit_seq: ev.unit_seq,
            reason: *reason,
        },
        Outcome::DuplicateAck => return None,
    };
    Some((ev.key(), msg))
}

impl<S: JournalSink> Central<S> {
    /// Starts on an empty journal.
    pub fn start(registry: Registry, sink: S, now: Timestamp) -> Result<Self, CentralError> {
        Self::recover(registry, &[], sink, now)
    }

    /// Rebuilds state from an existing valid journal prefix, then continues
    /// appending to `sink` (which must already hold exactly those records).
    pub fn recover(
        registry: Registry,
        records: &[JournalRecord],
        sink: S,
        now: Timestamp,
    ) -> Result<Self, CentralError> {
        let mut replayer = Replayer::new(&registry);
        let mut replies = HashMap::new();
        for rec in records {
            replayer.apply(rec)?;
            if let Some((key, msg)) = reply_for(rec) {
                replies.insert(key, msg);
            }
        }
        let state = replayer.into_state();
        let (last_seq, last_time) = records
            .last()
            .map_or((0, Timestamp::ZERO), |r| (r.seq, r.central_time));
        let now = now.max(last_time);
        let mut journal = Journal::resume(sink, last_seq, last_time);
        journal.append_entry(JournalEntry::admin(AdminKind::Startup, &registry, now))?;
        Ok(Central {
            board: allocator::snapshot(&state),
            ledger: DedupeLedger::from_applied(&state.applied),
            registry,
            state,
            journal,
            replies,
        })
    }

    pub fn state(&self) -> &FloorState {
        &self.state
    }

    pub fn board(&self) -> &DisplayBoard {
        &self.board
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn journal(&self) -> &Journal<S> {
        &self.journal
    }

    pub fn ledger(&self) -> &DedupeLedger {
        &self.ledger
    }

    pub fn into_journal(self) -> Journal<S> {
        self.journal
    }

    /// Central time must not run backwards; a wall clock that stepped back
    /// is pinned to the last event time.
    pub fn clamp_time(&self, now: Timestamp) -> Timestamp {
        now.max(self.state.last_event_time)
    }

    pub fn handle_scan(&mut self, ev: &ScanEvent, now: Timestamp) -> Result<Dispatch, CentralError> {
        if self.state.is_applied(&ev.unit_id, ev.unit_seq) {
            let reply = self.replies.get(&ev.key()).cloned().unwrap_or(WireMessage::Ack {
                unit_id: ev.unit_id.clone(),
                unit_seq: ev.unit_seq,
                outcome: AckOutcome::Duplicate,
            });
            return Ok(Dispatch {
                reply,
                board: None,
                notifications: Vec::new(),
                journal_seq: None,
            });
        }

        let mut next = self.state.clone();
        let effects = match self.registry.verify_badge(&ev.badge) {
            Ok(rec) => {
                let scan = VerifiedScan {
                    event: ev.clone(),
                    workshop: rec.home_workshop.clone(),
                };
                allocator::apply_event_mut(&mut next, &scan, now)?
            }
            Err(why) => allocator::reject_unverified_mut(&mut next, ev, why, now)?,
        };

        let mut reply = None;
        let mut board = None;
        let mut notifications = Vec::new();
        let mut journal_seq = None;
        for effect in effects {
            match effect {
                // write-ahead: nothing below is released if this fails
                Effect::JournalAppend(entry) => journal_seq = Some(self.journal.append_entry(entry)?),
                Effect::Ack {
                    unit_id,
                    unit_seq,
                    outcome,
                } => {
                    reply = Some(WireMessage::Ack {
                        unit_id,
                        unit_seq,
                        outcome,
                    })
                }
                Effect::Reject {
                    unit_id,
                    unit_seq,
                    reason,
                } => {
                    reply = Some(WireMessage::Reject {
                        unit_id,
                        unit_seq,
                        reason,
                    })
                }
                Effect::DisplayUpdate(b) => board = Some(b),
                Effect::Notify { operator, text } => notifications.push(Notification {
                    time: now,
                    operator,
                    text,
                }),
            }
        }

        self.state = next;
        let delivery = self.ledger.dedupe_check(&ev.unit_id, ev.unit_seq);
        debug_assert_eq!(delivery, Delivery::FirstDelivery);
        if let Some(b) = &board {
            self.board = b.clone();
        }
        let reply = reply.expect("allocator always answers a first delivery");
        self.replies.insert(ev.key(), reply.clone());
        Ok(Dispatch {
            reply,
            board,
            notifications,
            journal_seq,
        })
    }

    /// Swaps in a new registry between events. Operators may change freely;
    /// the machine layout may not.
    pub fn reload_registry(&mut self, registry: Registry, now: Timestamp) -> Result<(), CentralError> {
        if registry.machines() != self.registry.machines() {
            return Err(CentralError::LayoutChanged);
        }
        let now = self.clamp_time(now);
        self.journal
            .append_entry(JournalEntry::admin(AdminKind::RegistryReload, &registry, now))?;
        self.registry = registry;
        Ok(())
    }
}
