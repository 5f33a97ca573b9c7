//! The central unit's allotment state machine.
//!
//! Operators are served first-come first-served per workshop, in the order
//! their check-ins reach the central unit. Machines are handed out lowest id
//! first. Automatic allotment never crosses workshops; a waiting operator
//! may take a vacant machine elsewhere only through an explicit claim.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    MachineId, MachineStatus, OperatorId, OperatorStatus, ScanEvent, ScanKind, Timestamp, UnitId,
    WorkshopId,
};
use crate::journal::{JournalEntry, JournalEvent, Outcome};
use crate::registry::Unauthorized;
use crate::state::{AllocatedRow, DisplayBoard, FloorState, VacantRow};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("clock regression: event at {now} precedes last event at {last}")]
    ClockRegression { now: Timestamp, last: Timestamp },
}

/// A scan whose badge has passed registry verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedScan {
    pub event: ScanEvent,
    /// Operator's home workshop, the scope of automatic allotment.
    pub workshop: WorkshopId,
}

/// State change caused by one accepted scan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Allotted {
        operator: OperatorId,
        machine: MachineId,
    },
    Queued {
        operator: OperatorId,
        workshop: WorkshopId,
        /// 1-based place in the workshop queue.
        position: usize,
    },
    CheckedOut {
        operator: OperatorId,
        machine: MachineId,
        /// Queue head that took over the machine, if anyone was waiting.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        handed_to: Option<OperatorId>,
    },
    LeftQueue {
        operator: OperatorId,
        workshop: WorkshopId,
    },
    Claimed {
        operator: OperatorId,
        machine: MachineId,
    },
    /// Administrative journal mark; no floor change.
    Noted,
}

impl Transition {
    /// Operator who was just given a machine, with that machine.
    pub fn newly_allocated(&self) -> Option<(&OperatorId, &MachineId)> {
        match self {
            Transition::Allotted { operator, machine } | Transition::Claimed { operator, machine } => {
                Some((operator, machine))
            }
            Transition::CheckedOut {
                machine,
                handed_to: Some(next),
                ..
            } => Some((next, machine)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    UnknownBadge,
    Inactive,
    AlreadyPresent,
    NotPresent,
    ClaimConflict,
    NotWaiting,
    UnknownMachine,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl From<Unauthorized> for RejectReason {
    fn from(u: Unauthorized) -> Self {
        match u {
            Unauthorized::UnknownBadge => RejectReason::UnknownBadge,
            Unauthorized::Inactive => RejectReason::Inactive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckOutcome {
    Applied(Transition),
    /// Redelivery of an already-applied scan.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    JournalAppend(JournalEntry),
    DisplayUpdate(DisplayBoard),
    Notify {
        operator: OperatorId,
        text: String,
    },
    Ack {
        unit_id: UnitId,
        unit_seq: u64,
        outcome: AckOutcome,
    },
    Reject {
        unit_id: UnitId,
        unit_seq: u64,
        reason: RejectReason,
    },
}

/// Pure transition: returns the next state and the effects to carry out.
pub fn apply_event(
    state: &FloorState,
    ev: &VerifiedScan,
    now: Timestamp,
) -> Result<(FloorState, Vec<Effect>), AllocError> {
    let mut next = state.clone();
    let effects = apply_event_mut(&mut next, ev, now)?;
    Ok((next, effects))
}

/// In-place form of [`apply_event`]. On error `state` is untouched.
pub fn apply_event_mut(
    state: &mut FloorState,
    ev: &VerifiedScan,
    now: Timestamp,
) -> Result<Vec<Effect>, AllocError> {
    admit(state, &ev.event, now, |state| {
        let operator = &ev.event.badge;
        match (ev.event.kind, &ev.event.machine) {
            (ScanKind::CheckIn, _) => handle_check_in(state, operator, &ev.workshop, now),
            (ScanKind::CheckOut, _) => handle_check_out(state, operator, now),
            (ScanKind::Claim, Some(machine)) => handle_claim(state, operator, machine, now),
            // validated at decode time; a claim without a target can only fail
            (ScanKind::Claim, None) => Err(RejectReason::UnknownMachine),
        }
    })
}

/// Records a scan whose badge failed verification. The idempotency key is
/// consumed so retransmissions are not journaled twice.
pub fn reject_unverified_mut(
    state: &mut FloorState,
    ev: &ScanEvent,
    why: Unauthorized,
    now: Timestamp,
) -> Result<Vec<Effect>, AllocError> {
    admit(state, ev, now, |_| Err(why.into()))
}

fn admit(
    state: &mut FloorState,
    ev: &ScanEvent,
    now: Timestamp,
    dispatch: impl FnOnce(&mut FloorState) -> Result<Transition, RejectReason>,
) -> Result<Vec<Effect>, AllocError> {
    if state.is_applied(&ev.unit_id, ev.unit_seq) {
        return Ok(vec![Effect::Ack {
            unit_id: ev.unit_id.clone(),
            unit_seq: ev.unit_seq,
            outcome: AckOutcome::Duplicate,
        }]);
    }
    if now < state.last_event_time {
        return Err(AllocError::ClockRegression {
            now,
            last: state.last_event_time,
        });
    }
    state
        .applied
        .entry(ev.unit_id.clone())
        .or_default()
        .insert(ev.unit_seq);
    state.last_event_time = now;

    let effects = match dispatch(state) {
        Ok(transition) => {
            let mut effects = vec![
                Effect::JournalAppend(JournalEntry {
                    central_time: now,
                    event: JournalEvent::Scan(ev.clone()),
                    outcome: Outcome::Applied {
                        transition: transition.clone(),
                    },
                }),
                Effect::Ack {
                    unit_id: ev.unit_id.clone(),
                    unit_seq: ev.unit_seq,
                    outcome: AckOutcome::Applied(transition.clone()),
                },
                Effect::DisplayUpdate(snapshot(state)),
            ];
            if let Some((operator, machine)) = transition.newly_allocated() {
                effects.push(Effect::Notify {
                    operator: operator.clone(),
                    text: format!("{operator}: machine {machine} allotted, please proceed"),
                });
            }
            effects
        }
        Err(reason) => vec![
            Effect::JournalAppend(JournalEntry {
                central_time: now,
                event: JournalEvent::Scan(ev.clone()),
                outcome: Outcome::Rejected { reason },
            }),
            Effect::Reject {
                unit_id: ev.unit_id.clone(),
                unit_seq: ev.unit_seq,
                reason,
            },
        ],
    };
    Ok(effects)
}

fn allocate(state: &mut FloorState, operator: &OperatorId, machine: &MachineId, now: Timestamp) {
    if let Some(slot) = state.machines.get_mut(machine) {
        slot.status = MachineStatus::Allocated {
            operator: operator.clone(),
            since: now,
        };
    }
    state.operators.insert(
        operator.clone(),
        OperatorStatus::Allocated {
            machine: machine.clone(),
            since: now,
        },
    );
}

fn dequeue(state: &mut FloorState, operator: &OperatorId) -> Option<WorkshopId> {
    let (ws, queue) = state
        .waiting
        .iter_mut()
        .find(|(_, q)| q.contains(operator))?;
    queue.retain(|o| o != operator);
    let ws = ws.clone();
    if queue.is_empty() {
        state.waiting.remove(&ws);
    }
    Some(ws)
}

pub fn handle_check_in(
    state: &mut FloorState,
    operator: &OperatorId,
    workshop: &WorkshopId,
    now: Timestamp,
) -> Result<Transition, RejectReason> {
    if *state.status_of(operator) != OperatorStatus::OffSite {
        return Err(RejectReason::AlreadyPresent);
    }
    match pick_machine(state, workshop) {
        Some(machine) => {
            allocate(state, operator, &machine, now);
            Ok(Transition::Allotted {
                operator: operator.clone(),
                machine,
            })
        }
        None => {
            let queue = state.waiting.entry(workshop.clone()).or_default();
            queue.push_back(operator.clone());
            let position = queue.len();
            state
                .operators
                .insert(operator.clone(), OperatorStatus::Waiting { since: now });
            Ok(Transition::Queued {
                operator: operator.clone(),
                workshop: workshop.clone(),
                position,
            })
        }
    }
}

/// Handles both end-of-shift and mid-shift exits.
pub fn handle_check_out(
    state: &mut FloorState,
    operator: &OperatorId,
    now: Timestamp,
) -> Result<Transition, RejectReason> {
    match state.status_of(operator).clone() {
        OperatorStatus::OffSite => Err(RejectReason::NotPresent),
        OperatorStatus::Waiting { .. } => {
            let workshop = dequeue(state, operator).ok_or(RejectReason::NotPresent)?;
            state.operators.insert(operator.clone(), OperatorStatus::OffSite);
            Ok(Transition::LeftQueue {
                operator: operator.clone(),
                workshop,
            })
        }
        OperatorStatus::Allocated { machine, .. } => {
            state.operators.insert(operator.clone(), OperatorStatus::OffSite);
            let workshop = state.machines.get(&machine).map(|s| s.workshop.clone());
            let next = workshop.as_ref().and_then(|ws| {
                let queue = state.waiting.get_mut(ws)?;
                let head = queue.pop_front();
                if queue.is_empty() {
                    state.waiting.remove(ws);
                }
                head
            });
            match &next {
                Some(head) => allocate(state, head, &machine, now),
                None => {
                    if let Some(slot) = state.machines.get_mut(&machine) {
                        slot.status = MachineStatus::Vacant;
                    }
                }
            }
            Ok(Transition::CheckedOut {
                operator: operator.clone(),
                machine,
                handed_to: next,
            })
        }
    }
}

/// A waiting operator opts in to a vacant machine in any workshop.
///
/// Checks run in a fixed order: unknown machine, then operator not waiting,
/// then machine not vacant.
pub fn handle_claim(
    state: &mut FloorState,
    operator: &OperatorId,
    machine: &MachineId,
    now: Timestamp,
) -> Result<Transition, RejectReason> {
    let slot = state.machines.get(machine).ok_or(RejectReason::UnknownMachine)?;
    if !matches!(state.status_of(operator), OperatorStatus::Waiting { .. }) {
        return Err(RejectReason::NotWaiting);
    }
    if slot.status != MachineStatus::Vacant {
        return Err(RejectReason::ClaimConflict);
    }
    dequeue(state, operator);
    allocate(state, operator, machine, now);
    Ok(Transition::Claimed {
        operator: operator.clone(),
        machine: machine.clone(),
    })
}

/// Lowest vacant machine id in `workshop`.
pub fn pick_machine(state: &FloorState, workshop: &WorkshopId) -> Option<MachineId> {
    state
        .machines
        .iter()
        .find(|(_, s)| &s.workshop == workshop && s.status == MachineStatus::Vacant)
        .map(|(id, _)| id.clone())
}

pub fn snapshot(state: &FloorState) -> DisplayBoard {
    let mut allocated = Vec::new();
    let mut vacant = Vec::new();
    let mut waiting: BTreeMap<WorkshopId, Vec<OperatorId>> = BTreeMap::new();
    for (id, slot) in &state.machines {
        waiting.entry(slot.workshop.clone()).or_default();
        match &slot.status {
            MachineStatus::Vacant => vacant.push(VacantRow {
                machine: id.clone(),
                workshop: slot.workshop.clone(),
            }),
            MachineStatus::Allocated { operator, .. } => allocated.push(AllocatedRow {
                machine: id.clone(),
                operator: operator.clone(),
                workshop: slot.workshop.clone(),
            }),
        }
    }
    for (ws, queue) in &state.waiting {
        waiting.insert(ws.clone(), queue.iter().cloned().collect());
    }
    DisplayBoard {
        allocated,
        vacant,
        waiting,
        as_of: state.last_event_time,
    }
}
