//! Central-unit floor state, the display board derived from it, and the
//! invariant checker used by tests and the simulation harness.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::domain::{MachineId, MachineStatus, OperatorId, OperatorStatus, Timestamp, UnitId, WorkshopId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineSlot {
    pub workshop: WorkshopId,
    pub status: MachineStatus,
}

/// Authoritative state of the central unit.
///
/// Operators enter `operators` on their first verified check-in and stay
/// there (as `OffSite`) after leaving. Waiting queues are kept only while
/// nonempty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloorState {
    pub machines: BTreeMap<MachineId, MachineSlot>,
    pub operators: BTreeMap<OperatorId, OperatorStatus>,
    pub waiting: BTreeMap<WorkshopId, VecDeque<OperatorId>>,
    pub applied: BTreeMap<UnitId, BTreeSet<u64>>,
    pub last_event_time: Timestamp,
}

impl FloorState {
    /// All machines vacant, nobody on site.
    pub fn new<I>(machines: I) -> Self
    where
        I: IntoIterator<Item = (MachineId, WorkshopId)>,
    {
        FloorState {
            machines: machines
                .into_iter()
                .map(|(id, workshop)| {
                    let slot = MachineSlot {
                        workshop,
                        status: MachineStatus::Vacant,
                    };
                    (id, slot)
                })
                .collect(),
            ..Default::default()
        }
    }

    pub fn status_of(&self, operator: &OperatorId) -> &OperatorStatus {
        self.operators
            .get(operator)
            .unwrap_or(&OperatorStatus::OffSite)
    }

    pub fn is_applied(&self, unit: &UnitId, seq: u64) -> bool {
        self.applied.get(unit).is_some_and(|s| s.contains(&seq))
    }

    pub fn workshops(&self) -> BTreeSet<&WorkshopId> {
        self.machines.values().map(|m| &m.workshop).collect()
    }

    pub fn allocated_count(&self) -> usize {
        self.machines
            .values()
            .filter(|m| matches!(m.status, MachineStatus::Allocated { .. }))
            .count()
    }

    pub fn vacant_count(&self) -> usize {
        self.machines.len() - self.allocated_count()
    }

    pub fn waiting_count(&self) -> usize {
        self.waiting.values().map(VecDeque::len).sum()
    }

    /// Copy with every timestamp zeroed. Two runs that made the same
    /// allocation decisions at different instants compare equal on this view.
    pub fn without_times(&self) -> FloorState {
        let mut out = self.clone();
        for slot in out.machines.values_mut() {
            if let MachineStatus::Allocated { since, .. } = &mut slot.status {
                *since = Timestamp::ZERO;
            }
        }
        for status in out.operators.values_mut() {
            match status {
                OperatorStatus::OffSite => {}
                OperatorStatus::Waiting { since } | OperatorStatus::Allocated { since, .. } => {
                    *since = Timestamp::ZERO
                }
            }
        }
        out.last_event_time = Timestamp::ZERO;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocatedRow {
    pub machine: MachineId,
    pub operator: OperatorId,
    pub workshop: WorkshopId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VacantRow {
    pub machine: MachineId,
    pub workshop: WorkshopId,
}

/// What the display units show: who is on which machine, what is free,
/// and who is still waiting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayBoard {
    pub allocated: Vec<AllocatedRow>,
    pub vacant: Vec<VacantRow>,
    /// Every workshop that has machines, including those with an empty queue.
    pub waiting: BTreeMap<WorkshopId, Vec<OperatorId>>,
    pub as_of: Timestamp,
}

impl DisplayBoard {
    /// Restricts the board to one workshop's machines and queue.
    pub fn for_workshop(&self, ws: &WorkshopId) -> DisplayBoard {
        DisplayBoard {
            allocated: self.allocated.iter().filter(|r| &r.workshop == ws).cloned().collect(),
            vacant: self.vacant.iter().filter(|r| &r.workshop == ws).cloned().collect(),
            waiting: self
                .waiting
                .iter()
                .filter(|(w, _)| *w == ws)
                .map(|(w, q)| (w.clone(), q.clone()))
                .collect(),
            as_of: self.as_of,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "violation")]
pub enum Violation {
    /// Machine claims an operator whose status does not point back at it.
    MachineOperatorMismatch { machine: MachineId, operator: OperatorId },
    /// Operator claims a machine that is missing or held by someone else.
    OperatorMachineMismatch { operator: OperatorId, machine: MachineId },
    /// Waiting operator absent from every queue.
    WaitingNotQueued { operator: OperatorId },
    /// Queued operator whose status is not Waiting.
    QueuedNotWaiting { operator: OperatorId, workshop: WorkshopId },
    /// Operator present more than once across all queues.
    QueuedTwice { operator: OperatorId },
    EmptyQueue { workshop: WorkshopId },
    /// A workshop has both a waiting operator and a vacant machine.
    UnmatchedVacancy { workshop: WorkshopId, operator: OperatorId, machine: MachineId },
}

/// Returns every violated floor invariant, with a witness for each.
/// An empty list means the state is healthy.
pub fn check_floor_invariants(state: &FloorState) -> Vec<Violation> {
    let mut out = Vec::new();

    for (id, slot) in &state.machines {
        if let MachineStatus::Allocated { operator, .. } = &slot.status {
            let back = matches!(
                state.operators.get(operator),
                Some(OperatorStatus::Allocated { machine, .. }) if machine == id
            );
            if !back {
                out.push(Violation::MachineOperatorMismatch {
                    machine: id.clone(),
                    operator: operator.clone(),
                });
            }
        }
    }

    let mut queued: BTreeMap<&OperatorId, usize> = BTreeMap::new();
    for (ws, queue) in &state.waiting {
        if queue.is_empty() {
            out.push(Violation::EmptyQueue { workshop: ws.clone() });
        }
        for op in queue {
            *queued.entry(op).or_default() += 1;
            if !matches!(state.operators.get(op), Some(OperatorStatus::Waiting { .. })) {
                out.push(Violation::QueuedNotWaiting {
                    operator: op.clone(),
                    workshop: ws.clone(),
                });
            }
        }
    }
    for (op, n) in &queued {
        if *n > 1 {
            out.push(Violation::QueuedTwice { operator: (*op).clone() });
        }
    }

    for (op, status) in &state.operators {
        match status {
            OperatorStatus::OffSite => {}
            OperatorStatus::Waiting { .. } => {
                if !queued.contains_key(op) {
                    out.push(Violation::WaitingNotQueued { operator: op.clone() });
                }
            }
            OperatorStatus::Allocated { machine, .. } => {
                let forward = matches!(
                    state.machines.get(machine),
                    Some(MachineSlot { status: MachineStatus::Allocated { operator, .. }, .. }) if operator == op
                );
                if !forward {
                    out.push(Violation::OperatorMachineMismatch {
                        operator: op.clone(),
                        machine: machine.clone(),
                    });
                }
            }
        }
    }

    for (ws, queue) in &state.waiting {
        let Some(head) = queue.front() else { continue };
        let vacant = state
            .machines
            .iter()
            .find(|(_, s)| &s.workshop == ws && s.status == MachineStatus::Vacant);
        if let Some((machine, _)) = vacant {
            out.push(Violation::UnmatchedVacancy {
                workshop: ws.clone(),
                operator: head.clone(),
                machine: machine.clone(),
            });
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::parse_badge_code;

    fn floor() -> FloorState {
        FloorState::new([
            (MachineId::new("M01"), WorkshopId::new("W1")),
            (MachineId::new("M02"), WorkshopId::new("W1")),
        ])
    }

    #[test]
    fn fresh_state_is_healthy() {
        let s = floor();
        assert!(check_floor_invariants(&s).is_empty());
        assert_eq!(s.vacant_count(), 2);
        assert!(s.operators.is_empty());
    }

    #[test]
    fn detects_broken_bijection() {
        let mut s = floor();
        let op = parse_badge_code("A24564").unwrap();
        s.machines.get_mut(&MachineId::new("M01")).unwrap().status = MachineStatus::Allocated {
            operator: op.clone(),
            since: Timestamp(5),
        };
        s.operators.insert(op.clone(), OperatorStatus::OffSite);
        assert_eq!(
            check_floor_invariants(&s),
            vec![Violation::MachineOperatorMismatch {
                machine: MachineId::new("M01"),
                operator: op,
            }]
        );
    }

    #[test]
    fn detects_waiting_beside_vacancy() {
        let mut s = floor();
        let op = parse_badge_code("A24564").unwrap();
        s.operators
            .insert(op.clone(), OperatorStatus::Waiting { since: Timestamp(1) });
        s.waiting
            .entry(WorkshopId::new("W1"))
            .or_default()
            .push_back(op.clone());
        assert_eq!(
            check_floor_invariants(&s),
            vec![Violation::UnmatchedVacancy {
                workshop: WorkshopId::new("W1"),
                operator: op,
                machine: MachineId::new("M01"),
            }]
        );
    }

    #[test]
    fn detects_queue_inconsistency() {
        let mut s = floor();
        let a = parse_badge_code("AAAA1").unwrap();
        let b = parse_badge_code("BBBB2").unwrap();
        s.operators.insert(a.clone(), OperatorStatus::Waiting { since: Timestamp(1) });
        s.operators.insert(b.clone(), OperatorStatus::OffSite);
        s.waiting.insert(WorkshopId::new("W9"), VecDeque::from([b.clone(), b.clone()]));
        let v = check_floor_invariants(&s);
        assert!(v.contains(&Violation::WaitingNotQueued { operator: a }));
        assert!(v.contains(&Violation::QueuedTwice { operator: b.clone() }));
        assert!(v.contains(&Violation::QueuedNotWaiting {
            operator: b,
            workshop: WorkshopId::new("W9"),
        }));
    }
}
