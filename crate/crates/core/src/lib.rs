//! Real-time operator–machine allocation and monitoring.
//!
//! Scan units report badge scans to a central unit, which allots machines
//! to arriving operators, keeps per-workshop waiting lists, journals every
//! decision and publishes a display board. The [`sim`] module drives the
//! whole system over a lossy simulated link and checks it against an
//! independent reference implementation.

pub mod allocator;
pub mod canonical;
pub mod central;
pub mod domain;
pub mod journal;
pub mod protocol;
pub mod registry;
pub mod sim;
pub mod state;

pub use allocator::{apply_event, pick_machine, snapshot, AckOutcome, Effect, RejectReason, Transition, VerifiedScan};
pub use central::{Central, Dispatch, Notification};
pub use domain::{parse_badge_code, BadgeCode, MachineId, OperatorId, ScanEvent, ScanKind, Timestamp, UnitId, WorkshopId};
pub use journal::{replay, Journal, JournalRecord};
pub use registry::{load_registry, Registry};
pub use state::{check_floor_invariants, DisplayBoard, FloorState};
