//! Reference model: applies a scenario's script sequentially, in script
//! order, with no network and no journal. Deliberately naive (flat vectors,
//! linear scans) and independent of the allocator module.

use std::collections::BTreeMap;

use crate::domain::{MachineId, MachineStatus, OperatorId, OperatorStatus, ScanKind, Timestamp, WorkshopId};
use crate::state::{FloorState, MachineSlot};

use super::{Scenario, SimError};

#[derive(Clone, PartialEq)]
enum Who {
    Away,
    Queued(u64),
    Working(String, u64),
}

struct Machine {
    id: String,
    workshop: String,
    user: Option<(String, u64)>,
}

/// Final floor state the script should produce when every scan is
/// delivered exactly once, in order, at its scripted time.
pub fn oracle_run(scenario: &Scenario) -> Result<FloorState, SimError> {
    scenario.validate()?;
    let doc = &scenario.registry;

    let mut machines: Vec<Machine> = doc
        .machines
        .iter()
        .map(|m| Machine {
            id: m.id.as_str().to_string(),
            workshop: m.workshop.as_str().to_string(),
            user: None,
        })
        .collect();
    machines.sort_by(|a, b| a.id.cmp(&b.id));

    let mut people: Vec<(String, Who)> = Vec::new();
    // (operator, workshop) in arrival order across all workshops
    let mut line: Vec<(String, String)> = Vec::new();
    let mut seen: Vec<(String, u64)> = Vec::new();
    let mut last_time = 0;

    for ts in scenario.timed_scans() {
        let ev = ts.event;
        let t = ts.at.millis();
        seen.push((ev.unit_id.as_str().to_string(), ev.unit_seq));
        last_time = t;

        let badge = ev.badge.as_str();
        let Some(op) = doc.operators.iter().find(|o| o.badge.as_str() == badge) else {
            continue;
        };
        if !op.active {
            continue;
        }
        let home = op.workshop.as_str().to_string();
        let idx = match people.iter().position(|(b, _)| b == badge) {
            Some(i) => i,
            None if ev.kind == ScanKind::CheckIn => {
                people.push((badge.to_string(), Who::Away));
                people.len() - 1
            }
            // never checked in: reject, and keep them out of the state
            None => continue,
        };

        match ev.kind {
            ScanKind::CheckIn => {
                if people[idx].1 != Who::Away {
                    continue;
                }
                let free = machines.iter_mut().find(|m| m.workshop == home && m.user.is_none());
                match free {
                    Some(m) => {
                        m.user = Some((badge.to_string(), t));
                        people[idx].1 = Who::Working(m.id.clone(), t);
                    }
                    None => {
                        line.push((badge.to_string(), home));
                        people[idx].1 = Who::Queued(t);
                    }
                }
            }
            ScanKind::CheckOut => match people[idx].1.clone() {
                Who::Away => {}
                Who::Queued(_) => {
                    line.retain(|(b, _)| b != badge);
                    people[idx].1 = Who::Away;
                }
                Who::Working(mid, _) => {
                    people[idx].1 = Who::Away;
                    let m = machines.iter_mut().find(|m| m.id == mid).expect("machine exists");
                    m.user = None;
                    let ws = m.workshop.clone();
                    if let Some(pos) = line.iter().position(|(_, w)| *w == ws) {
                        let (next, _) = line.remove(pos);
                        m.user = Some((next.clone(), t));
                        let p = people.iter_mut().find(|(b, _)| *b == next).expect("queued person exists");
                        p.1 = Who::Working(mid, t);
                    }
                }
            },
            ScanKind::Claim => {
                let target = ev.machine.as_ref().expect("claims carry a machine").as_str();
                let Some(m) = machines.iter_mut().find(|m| m.id == target) else {
                    continue;
                };
                if !matches!(people[idx].1, Who::Queued(_)) || m.user.is_some() {
                    continue;
                }
                line.retain(|(b, _)| b != badge);
                m.user = Some((badge.to_string(), t));
                people[idx].1 = Who::Working(m.id.clone(), t);
            }
        }
    }

    let mut state = FloorState {
        machines: BTreeMap::new(),
        operators: BTreeMap::new(),
        waiting: BTreeMap::new(),
        applied: BTreeMap::new(),
        last_event_time: Timestamp(last_time),
    };
    for m in machines {
        let status = match m.user {
            None => MachineStatus::Vacant,
            Some((op, since)) => MachineStatus::Allocated {
                operator: badge_id(&op),
                since: Timestamp(since),
            },
        };
        state.machines.insert(
            MachineId::new(m.id),
            MachineSlot {
                workshop: WorkshopId::new(m.workshop),
                status,
            },
        );
    }
    for (badge, who) in people {
        let status = match who {
            Who::Away => OperatorStatus::OffSite,
            Who::Queued(since) => OperatorStatus::Waiting { since: Timestamp(since) },
            Who::Working(m, since) => OperatorStatus::Allocated {
                machine: MachineId::new(m),
                since: Timestamp(since),
            },
        };
        state.operators.insert(badge_id(&badge), status);
    }
    for (badge, ws) in line {
        state
            .waiting
            .entry(WorkshopId::new(ws))
            .or_default()
            .push_back(badge_id(&badge));
    }
    for (unit, seq) in seen {
        state
            .applied
            .entry(crate::domain::UnitId::new(unit))
            .or_default()
            .insert(seq);
    }
    Ok(state)
}

fn badge_id(raw: &str) -> OperatorId {
    crate::domain::parse_badge_code(raw).expect("registry badges are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BadgeCode, UnitId};
    use crate::registry::{MachineEntry, OperatorEntry, RegistryDoc};
    use crate::sim::{gen_shift_change, ScriptEntry};

    fn b(s: &str) -> BadgeCode {
        crate::domain::parse_badge_code(s).unwrap()
    }

    fn two_machines(script: &[(ScanKind, &str)]) -> Scenario {
        let ws = WorkshopId::new("W1");
        Scenario {
            registry: RegistryDoc {
                workshops: vec![ws.clone()],
                machines: ["M01", "M02"]
                    .iter()
                    .map(|m| MachineEntry {
                        id: MachineId::new(*m),
                        workshop: ws.clone(),
                    })
                    .collect(),
                operators: ["AAAA", "BBBB", "CCCC"]
                    .iter()
                    .map(|o| OperatorEntry {
                        badge: b(o),
                        name: o.to_lowercase(),
                        workshop: ws.clone(),
                        active: true,
                    })
                    .collect(),
            },
            script: script
                .iter()
                .enumerate()
                .map(|(i, (kind, badge))| ScriptEntry {
                    at_ms: i as u64 * 10,
                    unit: UnitId::new("U1"),
                    kind: *kind,
                    badge: b(badge),
                    machine: None,
                })
                .collect(),
            duration_ms: None,
        }
    }

    fn holder(st: &FloorState, m: &str) -> Option<String> {
        match &st.machines[&MachineId::new(m)].status {
            MachineStatus::Allocated { operator, .. } => Some(operator.to_string()),
            MachineStatus::Vacant => None,
        }
    }

    #[test]
    fn third_arrival_waits() {
        use ScanKind::CheckIn;
        let st = oracle_run(&two_machines(&[(CheckIn, "AAAA"), (CheckIn, "BBBB"), (CheckIn, "CCCC")])).unwrap();
        assert_eq!(holder(&st, "M01").as_deref(), Some("AAAA"));
        assert_eq!(holder(&st, "M02").as_deref(), Some("BBBB"));
        assert_eq!(st.waiting[&WorkshopId::new("W1")], [b("CCCC")]);
    }

    #[test]
    fn empty_script_is_initial_state() {
        let sc = two_machines(&[]);
        let initial = FloorState::new(sc.registry.machines.iter().map(|m| (m.id.clone(), m.workshop.clone())));
        assert_eq!(oracle_run(&sc).unwrap(), initial);
    }

    #[test]
    fn in_then_out_leaves_floor_empty() {
        let st = oracle_run(&two_machines(&[(ScanKind::CheckIn, "AAAA"), (ScanKind::CheckOut, "AAAA")])).unwrap();
        assert_eq!(st.vacant_count(), 2);
        assert_eq!(st.operators[&b("AAAA")], OperatorStatus::OffSite);
    }

    #[test]
    fn shift_change_examples() {
        let st = oracle_run(&gen_shift_change(10, 12, 10, 0).unwrap()).unwrap();
        assert_eq!((st.allocated_count(), st.waiting_count()), (10, 2));
        let st = oracle_run(&gen_shift_change(10, 8, 10, 0).unwrap()).unwrap();
        assert_eq!((st.allocated_count(), st.vacant_count(), st.waiting_count()), (8, 2, 0));
        let sc = gen_shift_change(5, 0, 0, 0).unwrap();
        assert!(sc.script.is_empty());
        assert_eq!(oracle_run(&sc).unwrap().vacant_count(), 5);
    }
}
