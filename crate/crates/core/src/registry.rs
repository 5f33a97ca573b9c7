//! Authorized operators and the plant's machine layout.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BadgeCode, MachineId, WorkshopId};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry parse error: {0}")]
    Parse(String),
    #[error("duplicate badge {0}")]
    DuplicateBadge(BadgeCode),
    #[error("duplicate machine {0}")]
    DuplicateMachine(MachineId),
    #[error("duplicate workshop {0}")]
    DuplicateWorkshop(WorkshopId),
    #[error("{referrer} references undeclared workshop {workshop}")]
    UnknownWorkshop { referrer: String, workshop: WorkshopId },
    #[error("workshop {0} has no machines")]
    EmptyWorkshop(WorkshopId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unauthorized {
    UnknownBadge,
    Inactive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub badge: BadgeCode,
    pub name: String,
    pub home_workshop: WorkshopId,
    pub active: bool,
}

/// On-disk registry document. Also embedded verbatim in scenario files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryDoc {
    pub workshops: Vec<WorkshopId>,
    pub machines: Vec<MachineEntry>,
    pub operators: Vec<OperatorEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineEntry {
    pub id: MachineId,
    pub workshop: WorkshopId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorEntry {
    pub badge: BadgeCode,
    pub name: String,
    pub workshop: WorkshopId,
    pub active: bool,
}

/// Validated, immutable registry. Replace the whole value to reload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    operators: BTreeMap<BadgeCode, OperatorRecord>,
    machines: BTreeMap<MachineId, WorkshopId>,
}

impl Registry {
    pub fn from_doc(doc: RegistryDoc) -> Result<Self, RegistryError> {
        let mut workshops = BTreeSet::new();
        for ws in doc.workshops {
            if !workshops.insert(ws.clone()) {
                return Err(RegistryError::DuplicateWorkshop(ws));
            }
        }

        let mut machines = BTreeMap::new();
        for m in doc.machines {
            if !workshops.contains(&m.workshop) {
                return Err(RegistryError::UnknownWorkshop {
                    referrer: format!("machine {}", m.id),
                    workshop: m.workshop,
                });
            }
            if machines.insert(m.id.clone(), m.workshop).is_some() {
                return Err(RegistryError::DuplicateMachine(m.id));
            }
        }
        let used: BTreeSet<&WorkshopId> = machines.values().collect();
        if let Some(empty) = workshops.iter().find(|w| !used.contains(w)) {
            return Err(RegistryError::EmptyWorkshop(empty.clone()));
        }

        let mut operators = BTreeMap::new();
        for op in doc.operators {
            if !workshops.contains(&op.workshop) {
                return Err(RegistryError::UnknownWorkshop {
                    referrer: format!("operator {}", op.badge),
                    workshop: op.workshop,
                });
            }
            let record = OperatorRecord {
                badge: op.badge.clone(),
                name: op.name,
                home_workshop: op.workshop,
                active: op.active,
            };
            if operators.insert(op.badge.clone(), record).is_some() {
                return Err(RegistryError::DuplicateBadge(op.badge));
            }
        }

        Ok(Registry { operators, machines })
    }

    pub fn to_doc(&self) -> RegistryDoc {
        let workshops: BTreeSet<&WorkshopId> = self.machines.values().collect();
        RegistryDoc {
            workshops: workshops.into_iter().cloned().collect(),
            machines: self
                .machines
                .iter()
                .map(|(id, ws)| MachineEntry {
                    id: id.clone(),
                    workshop: ws.clone(),
                })
                .collect(),
            operators: self
                .operators
                .values()
                .map(|r| OperatorEntry {
                    badge: r.badge.clone(),
                    name: r.name.clone(),
                    workshop: r.home_workshop.clone(),
                    active: r.active,
                })
                .collect(),
        }
    }

    pub fn machines(&self) -> &BTreeMap<MachineId, WorkshopId> {
        &self.machines
    }

    pub fn operators(&self) -> impl Iterator<Item = &OperatorRecord> {
        self.operators.values()
    }

    pub fn get(&self, badge: &BadgeCode) -> Option<&OperatorRecord> {
        self.operators.get(badge)
    }

    /// Read-only lookup performed for every scan before it reaches the allocator.
    pub fn verify_badge(&self, code: &BadgeCode) -> Result<&OperatorRecord, Unauthorized> {
        match self.operators.get(code) {
            None => Err(Unauthorized::UnknownBadge),
            Some(r) if !r.active => Err(Unauthorized::Inactive),
            Some(r) => Ok(r),
        }
    }
}

pub fn load_registry<R: Read>(mut source: R) -> Result<Registry, RegistryError> {
    let mut buf = String::new();
    source
        .read_to_string(&mut buf)
        .map_err(|e| RegistryError::Parse(e.to_string()))?;
    let doc: RegistryDoc =
        serde_json::from_str(&buf).map_err(|e| RegistryError::Parse(e.to_string()))?;
    Registry::from_doc(doc)
}
