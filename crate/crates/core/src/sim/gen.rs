//! Scenario generators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{parse_badge_code, BadgeCode, MachineId, ScanKind, UnitId, WorkshopId};
use crate::registry::{MachineEntry, OperatorEntry, RegistryDoc};

use super::{Scenario, ScriptEntry, SimError};

/// Spacing of warm-up check-ins before the shift change.
pub const WARMUP_GAP_MS: u64 = 50;
/// Quiet period between the warm-up and the shift change.
pub const SETTLE_MS: u64 = 60_000;
/// Spacing of scans during the shift change.
pub const SHIFT_GAP_MS: u64 = 50;

pub const SCAN_IN_UNIT: &str = "SCAN-IN";
pub const SCAN_OUT_UNIT: &str = "SCAN-OUT";

/// Virtual time at which the first shift-change scan is scripted.
pub fn shift_start_ms(outgoing: usize) -> u64 {
    outgoing as u64 * WARMUP_GAP_MS + SETTLE_MS
}

fn badge(raw: String) -> BadgeCode {
    parse_badge_code(&raw).expect("generated badges are valid")
}

fn width(n: usize) -> usize {
    n.to_string().len()
}

/// Shift change on a single workshop `W1` with machines `M01..`.
///
/// The `outgoing` operators (`OUT0001..`) check in first and take machines
/// `M01..` in order. From [`shift_start_ms`] on, the outgoing operators
/// check out on `SCAN-OUT` while the `incoming` operators (`INC0001..`)
/// check in on `SCAN-IN`, in a seed-dependent interleaving.
pub fn gen_shift_change(machines: usize, incoming: usize, outgoing: usize, seed: u64) -> Result<Scenario, SimError> {
    if machines == 0 {
        return Err(SimError::InvalidCounts("need at least one machine".into()));
    }
    if outgoing > machines {
        return Err(SimError::InvalidCounts(format!(
            "{outgoing} outgoing operators cannot all be working {machines} machines"
        )));
    }
    let mw = width(machines).max(2);
    let ow = width(incoming.max(outgoing)).max(4);
    if 3 + ow > 12 {
        return Err(SimError::InvalidCounts("too many operators for badge codes".into()));
    }
    let ws = WorkshopId::new("W1");
    let outs: Vec<BadgeCode> = (1..=outgoing).map(|i| badge(format!("OUT{i:0ow$}"))).collect();
    let ins: Vec<BadgeCode> = (1..=incoming).map(|i| badge(format!("INC{i:0ow$}"))).collect();

    let registry = RegistryDoc {
        workshops: vec![ws.clone()],
        machines: (1..=machines)
            .map(|i| MachineEntry {
                id: MachineId::new(format!("M{i:0mw$}")),
                workshop: ws.clone(),
            })
            .collect(),
        operators: outs
            .iter()
            .chain(&ins)
            .map(|b| OperatorEntry {
                badge: b.clone(),
                name: b.as_str().to_lowercase(),
                workshop: ws.clone(),
                active: true,
            })
            .collect(),
    };

    let unit_in = UnitId::new(SCAN_IN_UNIT);
    let unit_out = UnitId::new(SCAN_OUT_UNIT);
    let scan = |at_ms, unit: &UnitId, kind, badge: &BadgeCode| ScriptEntry {
        at_ms,
        unit: unit.clone(),
        kind,
        badge: badge.clone(),
        machine: None,
    };

    let mut script: Vec<ScriptEntry> = outs
        .iter()
        .enumerate()
        .map(|(i, b)| scan(i as u64 * WARMUP_GAP_MS, &unit_in, ScanKind::CheckIn, b))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leaving = outs.clone();
    leaving.shuffle(&mut rng);
    let (mut o, mut i) = (0, 0);
    let mut at = shift_start_ms(outgoing);
    while o < leaving.len() || i < ins.len() {
        let left_out = leaving.len() - o;
        let left_in = ins.len() - i;
        if rng.random_range(0..left_out + left_in) < left_out {
            script.push(scan(at, &unit_out, ScanKind::CheckOut, &leaving[o]));
            o += 1;
        } else {
            script.push(scan(at, &unit_in, ScanKind::CheckIn, &ins[i]));
            i += 1;
        }
        at += SHIFT_GAP_MS;
    }

    Ok(Scenario {
        registry,
        script,
        duration_ms: None,
    })
}

/// Unit used by every operator homed in `ws` in [`gen_mixed_workload`].
pub fn unit_for(ws: &WorkshopId) -> UnitId {
    UnitId::new(format!("UNIT-{}", ws.as_str()))
}

/// Random check-in / check-out / claim traffic over two workshops, with
/// unknown and inactive badges mixed in.
///
/// All scans of one operator go through their home workshop's unit, so each
/// unit's scans reach the central unit in script order even on a lossy
/// link. Claims are restricted so that the final state does not depend on
/// how the two units' streams interleave:
/// * operators of a workshop with more machines than operators never wait,
///   so their claims always fail and may name any machine;
/// * other operators only claim unknown machines or the surplus machines of
///   the other workshop (ones its own operators can never occupy).
pub fn gen_mixed_workload(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wss = [WorkshopId::new("W1"), WorkshopId::new("W2")];
    let total_machines = rng.random_range(2..=20usize);
    let m1 = rng.random_range(1..total_machines);
    let counts = [m1, total_machines - m1];
    let total_ops = rng.random_range(2..=50usize);
    let o1 = rng.random_range(1..total_ops);
    let op_counts = [o1, total_ops - o1];

    let mut machines = Vec::new();
    let mut by_ws: [Vec<MachineId>; 2] = [Vec::new(), Vec::new()];
    for (w, ws) in wss.iter().enumerate() {
        for i in 1..=counts[w] {
            let id = MachineId::new(format!("{}M{i:02}", ws.as_str()));
            by_ws[w].push(id.clone());
            machines.push(MachineEntry {
                id,
                workshop: ws.clone(),
            });
        }
    }

    let mut operators = Vec::new();
    let mut ops: [Vec<BadgeCode>; 2] = [Vec::new(), Vec::new()];
    for (w, ws) in wss.iter().enumerate() {
        for i in 1..=op_counts[w] {
            let b = badge(format!("{}OP{i:03}", ws.as_str()));
            // roughly one in ten registered operators is deactivated
            let active = rng.random_range(0..10) != 0;
            if active {
                ops[w].push(b.clone());
            }
            operators.push(OperatorEntry {
                badge: b.clone(),
                name: format!("op {}", b.as_str().to_lowercase()),
                workshop: ws.clone(),
                active,
            });
        }
    }
    let inactive: Vec<(usize, BadgeCode)> = operators
        .iter()
        .filter(|o| !o.active)
        .map(|o| (usize::from(o.workshop != wss[0]), o.badge.clone()))
        .collect();
    let ghosts = [badge("GHOST01".into()), badge("GHOST02".into())];
    let unknown_machine = MachineId::new("NOSUCH");

    // Surplus counts every registered operator, active or not.
    let surplus: [Vec<MachineId>; 2] =
        [0, 1].map(|w| by_ws[w].iter().skip(op_counts[w]).cloned().collect());

    let n = rng.random_range(20..=150usize);
    let mut at = 0u64;
    let mut script = Vec::with_capacity(n);
    for _ in 0..n {
        at += rng.random_range(0..=3_000);
        let roll = rng.random_range(0..100);
        let kind = match rng.random_range(0..100) {
            0..45 => ScanKind::CheckIn,
            45..85 => ScanKind::CheckOut,
            _ => ScanKind::Claim,
        };
        let (w, who) = if roll < 5 {
            (rng.random_range(0..2), ghosts[rng.random_range(0..2)].clone())
        } else if roll < 10 && !inactive.is_empty() {
            inactive[rng.random_range(0..inactive.len())].clone()
        } else {
            let w = rng.random_range(0..2);
            let w = if ops[w].is_empty() { 1 - w } else { w };
            if ops[w].is_empty() {
                continue;
            }
            (w, ops[w][rng.random_range(0..ops[w].len())].clone())
        };
        let machine = (kind == ScanKind::Claim).then(|| {
            let mut choices = vec![unknown_machine.clone()];
            if !surplus[w].is_empty() {
                choices.extend(by_ws[0].iter().chain(&by_ws[1]).cloned());
            } else {
                choices.extend(surplus[1 - w].iter().cloned());
            }
            choices[rng.random_range(0..choices.len())].clone()
        });
        script.push(ScriptEntry {
            at_ms: at,
            unit: unit_for(&wss[w]),
            kind,
            badge: who,
            machine,
        });
    }

    Scenario {
        registry: RegistryDoc {
            workshops: wss.to_vec(),
            machines,
            operators,
        },
        script,
        duration_ms: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_change_layout() {
        let s = gen_shift_change(200, 200, 200, 5).unwrap();
        assert_eq!(s.registry.machines.len(), 200);
        assert_eq!(s.registry.machines[0].id, MachineId::new("M001"));
        assert_eq!(s.script.len(), 600);
        let start = shift_start_ms(200);
        assert_eq!(s.script.iter().filter(|e| e.at_ms >= start).count(), 400);
        s.validate().unwrap();
    }

    #[test]
    fn shift_change_rejects_impossible_counts() {
        assert!(gen_shift_change(0, 1, 0, 1).is_err());
        assert!(gen_shift_change(3, 1, 4, 1).is_err());
    }

    #[test]
    fn mixed_workload_is_valid_and_seeded() {
        for seed in 0..50 {
            let s = gen_mixed_workload(seed);
            s.validate().unwrap();
            assert!(s.registry.machines.len() <= 20);
            assert!(s.registry.operators.len() <= 50);
            assert_eq!(s, gen_mixed_workload(seed));
        }
    }
}
