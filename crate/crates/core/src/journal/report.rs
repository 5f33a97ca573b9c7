//! Work-hours and machine-utilization reports computed from the journal.
//!
//! All intervals are half-open `[start, end)` in central time.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use super::{JournalEvent, JournalRecord};
use crate::allocator::Transition;
use crate::domain::{MachineId, OperatorId, Timestamp};

pub const MS_PER_HOUR: u64 = 3_600_000;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown machine {0}")]
    UnknownMachine(MachineId),
    #[error("invalid window: start {start} is not before end {end}")]
    InvalidWindow { start: Timestamp, end: Timestamp },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Window {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self, ReportError> {
        if start >= end {
            return Err(ReportError::InvalidWindow { start, end });
        }
        Ok(Window { start, end })
    }

    pub fn len_ms(&self) -> u64 {
        self.end.0 - self.start.0
    }

    /// Overlap of `[from, to)` with the window, if nonempty.
    fn clip(&self, from: Timestamp, to: Timestamp) -> Option<(Timestamp, Timestamp)> {
        let s = from.max(self.start);
        let e = to.min(self.end);
        (s < e).then_some((s, e))
    }
}

/// Hours with three decimals, e.g. `8.000`.
pub fn format_hours(ms: u64) -> String {
    format!("{:.3}", ms as f64 / MS_PER_HOUR as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    pub start: Timestamp,
    pub end: Timestamp,
    /// No check-out seen; `end` is the window end.
    pub incomplete: bool,
}

impl Session {
    pub fn duration_ms(&self) -> u64 {
        self.end.0 - self.start.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkHoursReport {
    pub operator: OperatorId,
    pub window: Window,
    pub sessions: Vec<Session>,
    pub total_ms: u64,
}

impl WorkHoursReport {
    pub fn total_hours(&self) -> String {
        format_hours(self.total_ms)
    }

    pub fn has_incomplete(&self) -> bool {
        self.sessions.iter().any(|s| s.incomplete)
    }
}

fn transitions(records: &[JournalRecord]) -> impl Iterator<Item = (Timestamp, &Transition)> {
    records
        .iter()
        .filter_map(|r| r.transition().map(|t| (r.central_time, t)))
}

/// On-site sessions of one operator: from an accepted check-in (allotted or
/// queued) to the matching check-out.
pub fn work_hours_report(records: &[JournalRecord], operator: &OperatorId, window: Window) -> WorkHoursReport {
    let mut sessions = Vec::new();
    let mut open: Option<Timestamp> = None;
    for (t, tr) in transitions(records) {
        match tr {
            Transition::Allotted { operator: o, .. } | Transition::Queued { operator: o, .. }
                if o == operator =>
            {
                open = Some(t);
            }
            Transition::CheckedOut { operator: o, .. } | Transition::LeftQueue { operator: o, .. }
                if o == operator =>
            {
                if let Some((s, e)) = open.take().and_then(|start| window.clip(start, t)) {
                    sessions.push(Session {
                        start: s,
                        end: e,
                        incomplete: false,
                    });
                }
            }
            _ => {}
        }
    }
    if let Some((s, e)) = open.and_then(|start| window.clip(start, window.end)) {
        sessions.push(Session {
            start: s,
            end: e,
            incomplete: true,
        });
    }
    let total_ms = sessions.iter().map(Session::duration_ms).sum();
    WorkHoursReport {
        operator: operator.clone(),
        window,
        sessions,
        total_ms,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub operator: OperatorId,
    pub start: Timestamp,
    pub end: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilizationReport {
    pub machine: MachineId,
    pub window: Window,
    pub segments: Vec<Segment>,
    pub busy_ms: u64,
    /// Busy time over window length, in `[0, 1]`.
    pub utilization: f64,
}

/// Machines named anywhere in the journal: layout marks plus transitions.
pub fn known_machines(records: &[JournalRecord]) -> BTreeSet<MachineId> {
    let mut out = BTreeSet::new();
    for r in records {
        if let JournalEvent::Admin(mark) = &r.event {
            out.extend(mark.machines.iter().map(|m| m.id.clone()));
        }
        match r.transition() {
            Some(Transition::Allotted { machine, .. })
            | Some(Transition::Claimed { machine, .. })
            | Some(Transition::CheckedOut { machine, .. }) => {
                out.insert(machine.clone());
            }
            _ => {}
        }
    }
    out
}

/// Allocation segments per machine, clipped to the window.
fn machine_segments(records: &[JournalRecord], window: Window) -> BTreeMap<MachineId, Vec<Segment>> {
    let mut open: BTreeMap<&MachineId, (&OperatorId, Timestamp)> = BTreeMap::new();
    let mut out: BTreeMap<MachineId, Vec<Segment>> = BTreeMap::new();
    let mut close = |machine: &MachineId, operator: &OperatorId, start: Timestamp, end: Timestamp| {
        if let Some((s, e)) = window.clip(start, end) {
            out.entry(machine.clone()).or_default().push(Segment {
                operator: operator.clone(),
                start: s,
                end: e,
            });
        }
    };
    for (t, tr) in transitions(records) {
        match tr {
            Transition::Allotted { operator, machine } | Transition::Claimed { operator, machine } => {
                open.insert(machine, (operator, t));
            }
            Transition::CheckedOut {
                machine, handed_to, ..
            } => {
                if let Some((op, start)) = open.remove(machine) {
                    close(machine, op, start, t);
                }
                if let Some(next) = handed_to {
                    open.insert(machine, (next, t));
                }
            }
            _ => {}
        }
    }
    for (machine, (op, start)) in open {
        close(machine, op, start, window.end);
    }
    out
}

pub fn utilization_report(
    records: &[JournalRecord],
    machine: &MachineId,
    window: Window,
) -> Result<UtilizationReport, ReportError> {
    if !known_machines(records).contains(machine) {
        return Err(ReportError::UnknownMachine(machine.clone()));
    }
    let segments = machine_segments(records, window)
        .remove(machine)
        .unwrap_or_default();
    let busy_ms: u64 = segments.iter().map(|s| s.end.0 - s.start.0).sum();
    Ok(UtilizationReport {
        machine: machine.clone(),
        window,
        segments,
        busy_ms,
        utilization: busy_ms as f64 / window.len_ms() as f64,
    })
}

/// Busy time per machine within the window.
pub fn busy_time_by_machine(records: &[JournalRecord], window: Window) -> BTreeMap<MachineId, u64> {
    machine_segments(records, window)
        .into_iter()
        .map(|(m, segs)| (m, segs.iter().map(|s| s.end.0 - s.start.0).sum()))
        .collect()
}

/// Time each operator spent holding some machine within the window,
/// computed from the operator side of each transition.
pub fn allocated_time_by_operator(records: &[JournalRecord], window: Window) -> BTreeMap<OperatorId, u64> {
    let mut holding: BTreeMap<&OperatorId, Timestamp> = BTreeMap::new();
    let mut out: BTreeMap<OperatorId, u64> = BTreeMap::new();
    let mut credit = |op: &OperatorId, start: Timestamp, end: Timestamp| {
        if let Some((s, e)) = window.clip(start, end) {
            *out.entry(op.clone()).or_default() += e.0 - s.0;
        }
    };
    for (t, tr) in transitions(records) {
        match tr {
            Transition::Allotted { operator, .. } | Transition::Claimed { operator, .. } => {
                holding.insert(operator, t);
            }
            Transition::CheckedOut {
                operator, handed_to, ..
            } => {
                if let Some(start) = holding.remove(operator) {
                    credit(operator, start, t);
                }
                if let Some(next) = handed_to {
                    holding.insert(next, t);
                }
            }
            _ => {}
        }
    }
    for (op, start) in holding {
        credit(op, start, window.end);
    }
    out
}

pub fn write_hours_csv<W: Write>(report: &WorkHoursReport, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["operator", "kind", "start_ms", "end_ms", "hours", "incomplete"])?;
    for s in &report.sessions {
        w.write_record([
            report.operator.as_str(),
            "session",
            &s.start.to_string(),
            &s.end.to_string(),
            &format_hours(s.duration_ms()),
            &s.incomplete.to_string(),
        ])?;
    }
    w.write_record([
        report.operator.as_str(),
        "total",
        &report.window.start.to_string(),
        &report.window.end.to_string(),
        &report.total_hours(),
        &report.has_incomplete().to_string(),
    ])?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_utilization_csv<W: Write>(report: &UtilizationReport, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["machine", "kind", "operator", "start_ms", "end_ms", "hours", "utilization"])?;
    for s in &report.segments {
        w.write_record([
            report.machine.as_str(),
            "segment",
            s.operator.as_str(),
            &s.start.to_string(),
            &s.end.to_string(),
            &format_hours(s.end.0 - s.start.0),
            "",
        ])?;
    }
    w.write_record([
        report.machine.as_str(),
        "total",
        "",
        &report.window.start.to_string(),
        &report.window.end.to_string(),
        &format_hours(report.busy_ms),
        &format!("{:.3}", report.utilization),
    ])?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{parse_badge_code, ScanEvent, UnitId, WorkshopId};
    use crate::journal::{AdminKind, AdminMark, Outcome};
    use crate::registry::MachineEntry;

    const H: u64 = MS_PER_HOUR;

    struct Builder {
        records: Vec<JournalRecord>,
    }

    impl Builder {
        fn new(machines: &[&str]) -> Self {
            let mark = AdminMark {
                kind: AdminKind::Startup,
                machines: machines
                    .iter()
                    .map(|m| MachineEntry {
                        id: MachineId::new(*m),
                        workshop: WorkshopId::new("W1"),
                    })
                    .collect(),
            };
            Builder {
                records: vec![JournalRecord {
                    seq: 1,
                    central_time: Timestamp(0),
                    event: JournalEvent::Admin(mark),
                    outcome: Outcome::Applied { transition: Transition::Noted },
                }],
            }
        }

        fn push(mut self, hour: f64, transition: Transition) -> Self {
            let seq = self.records.len() as u64 + 1;
            self.records.push(JournalRecord {
                seq,
                central_time: Timestamp((hour * H as f64) as u64),
                event: JournalEvent::Scan(ScanEvent::check_in(
                    &UnitId::new("U1"),
                    seq,
                    op("A24564"),
                    Timestamp(0),
                )),
                outcome: Outcome::Applied { transition },
            });
            self
        }
    }

    fn op(s: &str) -> OperatorId {
        parse_badge_code(s).unwrap()
    }

    fn m(s: &str) -> MachineId {
        MachineId::new(s)
    }

    fn allot(o: &str, machine: &str) -> Transition {
        Transition::Allotted { operator: op(o), machine: m(machine) }
    }

    fn out(o: &str, machine: &str, next: Option<&str>) -> Transition {
        Transition::CheckedOut { operator: op(o), machine: m(machine), handed_to: next.map(op) }
    }

    fn day() -> Window {
        Window::new(Timestamp(0), Timestamp(24 * H)).unwrap()
    }

    #[test]
    fn single_eight_hour_session() {
        let j = Builder::new(&["M01"]).push(8.0, allot("A24564", "M01")).push(16.0, out("A24564", "M01", None));
        let r = work_hours_report(&j.records, &op("A24564"), day());
        assert_eq!(r.sessions.len(), 1);
        assert_eq!(r.total_hours(), "8.000");
        assert!(!r.has_incomplete());
    }

    #[test]
    fn two_sessions_sum() {
        let j = Builder::new(&["M01"])
            .push(8.0, allot("A24564", "M01"))
            .push(12.0, out("A24564", "M01", None))
            .push(13.0, allot("A24564", "M01"))
            .push(17.0, out("A24564", "M01", None));
        let r = work_hours_report(&j.records, &op("A24564"), day());
        assert_eq!(r.sessions.len(), 2);
        assert_eq!(r.total_hours(), "8.000");
    }

    #[test]
    fn open_session_is_clipped_and_flagged() {
        let j = Builder::new(&["M01"]).push(8.0, allot("A24564", "M01"));
        let w = Window::new(Timestamp(0), Timestamp(18 * H)).unwrap();
        let r = work_hours_report(&j.records, &op("A24564"), w);
        assert_eq!(r.total_hours(), "10.000");
        assert!(r.sessions[0].incomplete);
    }

    #[test]
    fn waiting_time_counts_as_on_site() {
        let j = Builder::new(&["M01"])
            .push(
                8.0,
                Transition::Queued { operator: op("A24564"), workshop: WorkshopId::new("W1"), position: 1 },
            )
            .push(9.0, Transition::LeftQueue { operator: op("A24564"), workshop: WorkshopId::new("W1") });
        let r = work_hours_report(&j.records, &op("A24564"), day());
        assert_eq!(r.total_hours(), "1.000");
        let unknown = work_hours_report(&j.records, &op("ZZZZ9"), day());
        assert!(unknown.sessions.is_empty());
        assert_eq!(unknown.total_ms, 0);
    }

    #[test]
    fn utilization_fractions() {
        let w = Window::new(Timestamp(8 * H), Timestamp(16 * H)).unwrap();
        // M03 is allotted before the window opens and never released
        let recs = Builder::new(&["M01", "M02", "M03"])
            .push(7.0, allot("BBBB1", "M03"))
            .push(9.0, allot("A24564", "M01"))
            .push(15.0, out("A24564", "M01", None))
            .records;
        let u1 = utilization_report(&recs, &m("M01"), w).unwrap();
        assert_eq!(format!("{:.3}", u1.utilization), "0.750");
        let u2 = utilization_report(&recs, &m("M02"), w).unwrap();
        assert_eq!(format!("{:.3}", u2.utilization), "0.000");
        let u3 = utilization_report(&recs, &m("M03"), w).unwrap();
        assert_eq!(format!("{:.3}", u3.utilization), "1.000");
        assert!(matches!(
            utilization_report(&recs, &m("M99"), w),
            Err(ReportError::UnknownMachine(_))
        ));
    }

    #[test]
    fn handover_is_double_entry_balanced() {
        let j = Builder::new(&["M01"])
            .push(1.0, allot("AAAA1", "M01"))
            .push(3.0, out("AAAA1", "M01", Some("BBBB2")))
            .push(4.0, out("BBBB2", "M01", None));
        let busy = busy_time_by_machine(&j.records, day());
        let held = allocated_time_by_operator(&j.records, day());
        assert_eq!(busy[&m("M01")], 3 * H);
        assert_eq!(held[&op("AAAA1")], 2 * H);
        assert_eq!(held[&op("BBBB2")], H);
    }

    #[test]
    fn csv_has_header_and_total_row() {
        let j = Builder::new(&["M01"]).push(8.0, allot("A24564", "M01")).push(16.0, out("A24564", "M01", None));
        let r = work_hours_report(&j.records, &op("A24564"), day());
        let mut buf = Vec::new();
        write_hours_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "operator,kind,start_ms,end_ms,hours,incomplete");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("A24564,total,"));
        assert!(lines[2].contains(",8.000,"));
    }

    #[test]
    fn rejects_empty_window() {
        assert!(Window::new(Timestamp(5), Timestamp(5)).is_err());
    }
}
