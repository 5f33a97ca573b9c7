//! Vocabulary types shared by every part of the system.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub const BADGE_MIN_LEN: usize = 4;
pub const BADGE_MAX_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BadgeFormat {
    #[error("badge code is empty")]
    Empty,
    #[error("badge code has {0} characters, expected {BADGE_MIN_LEN} to {BADGE_MAX_LEN}")]
    Length(usize),
    #[error("badge code contains illegal character {0:?}")]
    IllegalChar(char),
}

/// Operator badge code as read off the RFID card, e.g. `A24564`.
///
/// Always stored in normalized (uppercase) form, so equality and ordering
/// are on the canonical code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct BadgeCode(String);

impl BadgeCode {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BadgeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for BadgeCode {
    type Err = BadgeFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_badge_code(s)
    }
}

impl<'de> Deserialize<'de> for BadgeCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        parse_badge_code(&raw).map_err(serde::de::Error::custom)
    }
}

/// Validates a raw badge read and returns its normalized form.
///
/// Normalization is ASCII uppercasing only; whitespace is rejected rather
/// than trimmed.
pub fn parse_badge_code(raw: &str) -> Result<BadgeCode, BadgeFormat> {
    if raw.is_empty() {
        return Err(BadgeFormat::Empty);
    }
    if let Some(c) = raw.chars().find(|c| !c.is_ascii_alphanumeric()) {
        return Err(BadgeFormat::IllegalChar(c));
    }
    // all ASCII past this point, so len() is the character count
    if !(BADGE_MIN_LEN..=BADGE_MAX_LEN).contains(&raw.len()) {
        return Err(BadgeFormat::Length(raw.len()));
    }
    Ok(BadgeCode(raw.to_ascii_uppercase()))
}

/// Operators are identified by their normalized badge code.
pub type OperatorId = BadgeCode;

macro_rules! text_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            /// Panics on an empty identifier; use `try_new` for untrusted input.
            pub fn new(id: impl Into<String>) -> Self {
                Self::try_new(id).expect(concat!(stringify!($name), " must be nonempty"))
            }

            pub fn try_new(id: impl Into<String>) -> Option<Self> {
                let id = id.into();
                (!id.is_empty()).then_some(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                Self::try_new(raw).ok_or_else(|| {
                    serde::de::Error::custom(concat!(stringify!($name), " must be nonempty"))
                })
            }
        }
    };
}

text_id!(
    /// Machine identifier. Ordering is plain lexicographic, which is what
    /// the allotment tie-break uses, so ids should be zero padded.
    MachineId
);
text_id!(WorkshopId);
text_id!(
    /// Identifies a scan unit (scan-in or scan-out terminal).
    UnitId
);

/// Milliseconds since the Unix epoch.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn millis(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    #[serde(rename = "in")]
    CheckIn,
    #[serde(rename = "out")]
    CheckOut,
    Claim,
}

impl fmt::Display for ScanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanKind::CheckIn => "in",
            ScanKind::CheckOut => "out",
            ScanKind::Claim => "claim",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScanEventError {
    #[error("unit_seq must be positive")]
    ZeroSeq,
    #[error("claim scan must name a machine")]
    ClaimWithoutMachine,
    #[error("{0} scan must not name a machine")]
    UnexpectedMachine(ScanKind),
}

/// One badge scan reported by a scan unit.
///
/// `(unit_id, unit_seq)` is the idempotency key. `unit_time` comes from the
/// unit's own clock and is kept for audit only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanEvent {
    pub unit_id: UnitId,
    pub unit_seq: u64,
    pub kind: ScanKind,
    pub badge: BadgeCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine: Option<MachineId>,
    pub unit_time: Timestamp,
}

impl ScanEvent {
    pub fn check_in(unit: &UnitId, seq: u64, badge: BadgeCode, at: Timestamp) -> Self {
        Self::new(unit, seq, ScanKind::CheckIn, badge, None, at)
    }

    pub fn check_out(unit: &UnitId, seq: u64, badge: BadgeCode, at: Timestamp) -> Self {
        Self::new(unit, seq, ScanKind::CheckOut, badge, None, at)
    }

    pub fn claim(
        unit: &UnitId,
        seq: u64,
        badge: BadgeCode,
        machine: MachineId,
        at: Timestamp,
    ) -> Self {
        Self::new(unit, seq, ScanKind::Claim, badge, Some(machine), at)
    }

    fn new(
        unit: &UnitId,
        seq: u64,
        kind: ScanKind,
        badge: BadgeCode,
        machine: Option<MachineId>,
        at: Timestamp,
    ) -> Self {
        ScanEvent {
            unit_id: unit.clone(),
            unit_seq: seq,
            kind,
            badge,
            machine,
            unit_time: at,
        }
    }

    pub fn key(&self) -> (UnitId, u64) {
        (self.unit_id.clone(), self.unit_seq)
    }

    pub fn validate(&self) -> Result<(), ScanEventError> {
        if self.unit_seq == 0 {
            return Err(ScanEventError::ZeroSeq);
        }
        match (self.kind, &self.machine) {
            (ScanKind::Claim, None) => Err(ScanEventError::ClaimWithoutMachine),
            (ScanKind::Claim, Some(_)) | (_, None) => Ok(()),
            (kind, Some(_)) => Err(ScanEventError::UnexpectedMachine(kind)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorStatus {
    OffSite,
    /// Queue position is derived from the workshop's waiting queue.
    Waiting { since: Timestamp },
    Allocated { machine: MachineId, since: Timestamp },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineStatus {
    Vacant,
    Allocated { operator: OperatorId, since: Timestamp },
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_example_badge() {
        assert_eq!(parse_badge_code("A24564").unwrap().as_str(), "A24564");
    }

    #[test]
    fn uppercases_lowercase_badge() {
        assert_eq!(parse_badge_code("a24564").unwrap().as_str(), "A24564");
    }

    #[test]
    fn rejects_malformed_badges() {
        assert_eq!(parse_badge_code(""), Err(BadgeFormat::Empty));
        assert_eq!(parse_badge_code("A24"), Err(BadgeFormat::Length(3)));
        assert_eq!(
            parse_badge_code("A2456400000000"),
            Err(BadgeFormat::Length(14))
        );
        assert_eq!(
            parse_badge_code(" A24564"),
            Err(BadgeFormat::IllegalChar(' '))
        );
        assert_eq!(
            parse_badge_code("A24-564"),
            Err(BadgeFormat::IllegalChar('-'))
        );
        assert_eq!(
            parse_badge_code("A24É564"),
            Err(BadgeFormat::IllegalChar('É'))
        );
    }

    #[test]
    fn scan_event_machine_iff_claim() {
        let unit = UnitId::new("U1");
        let badge = parse_badge_code("A24564").unwrap();
        let mut ev = ScanEvent::check_in(&unit, 1, badge.clone(), Timestamp(0));
        assert!(ev.validate().is_ok());
        ev.machine = Some(MachineId::new("M01"));
        assert_eq!(
            ev.validate(),
            Err(ScanEventError::UnexpectedMachine(ScanKind::CheckIn))
        );
        ev.kind = ScanKind::Claim;
        assert!(ev.validate().is_ok());
        ev.machine = None;
        assert_eq!(ev.validate(), Err(ScanEventError::ClaimWithoutMachine));
        ev.kind = ScanKind::CheckOut;
        ev.unit_seq = 0;
        assert_eq!(ev.validate(), Err(ScanEventError::ZeroSeq));
    }

    #[test]
    fn ids_reject_empty_on_deserialize() {
        assert!(serde_json::from_str::<MachineId>("\"\"").is_err());
        assert!(serde_json::from_str::<BadgeCode>("\"a1b2\"").is_ok());
        assert!(serde_json::from_str::<BadgeCode>("\"a 1\"").is_err());
    }

    proptest! {
        #[test]
        fn parse_is_idempotent(raw in "[a-zA-Z0-9]{0,14}") {
            if let Ok(code) = parse_badge_code(&raw) {
                prop_assert_eq!(parse_badge_code(code.as_str()), Ok(code.clone()));
                prop_assert!(code.as_str().chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()));
            } else {
                prop_assert!(raw.len() < BADGE_MIN_LEN || raw.len() > BADGE_MAX_LEN);
            }
        }
    }
}
