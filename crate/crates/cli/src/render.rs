//! Text rendering for terminal output.

use std::fmt::Write;

use omams_core::journal::report::{format_hours, UtilizationReport, WorkHoursReport};
use omams_core::protocol::WireMessage;
use omams_core::{AckOutcome, DisplayBoard, Transition};

/// One-line outcome printed by the scan tool.
pub fn outcome_line(reply: &WireMessage) -> String {
    match reply {
        WireMessage::Ack { outcome, .. } => match outcome {
            AckOutcome::Applied(t) => match t {
                Transition::Allotted { machine, .. } | Transition::Claimed { machine, .. } => {
                    format!("ALLOTTED {machine}")
                }
                Transition::Queued { position, .. } => format!("WAITING pos={position}"),
                Transition::CheckedOut { .. } | Transition::LeftQueue { .. } => "CHECKED-OUT".into(),
                Transition::Noted => "NOTED".into(),
            },
            AckOutcome::Duplicate => "DUPLICATE".into(),
        },
        WireMessage::Reject { reason, .. } => format!("REJECTED {reason}"),
        other => format!("UNEXPECTED {}", other.type_name()),
    }
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |out: &mut String, cells: Vec<&str>| {
        let mut s = String::from("  ");
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i + 1 == cells.len() {
                s.push_str(c);
            } else {
                let _ = write!(s, "{c:<w$}  ");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(out, header.to_vec());
    for r in rows {
        line(out, r.iter().map(String::as_str).collect());
    }
}

pub fn board_text(board: &DisplayBoard) -> String {
    let mut out = format!("BOARD as of {}\n", board.as_of);
    out.push_str("ALLOCATED\n");
    let rows: Vec<Vec<String>> = board
        .allocated
        .iter()
        .map(|r| vec![r.machine.to_string(), r.workshop.to_string(), r.operator.to_string()])
        .collect();
    table(&mut out, &["MACHINE", "WORKSHOP", "OPERATOR"], &rows);
    out.push_str("VACANT\n");
    let rows: Vec<Vec<String>> = board
        .vacant
        .iter()
        .map(|r| vec![r.machine.to_string(), r.workshop.to_string()])
        .collect();
    table(&mut out, &["MACHINE", "WORKSHOP"], &rows);
    out.push_str("WAITING\n");
    let rows: Vec<Vec<String>> = board
        .waiting
        .iter()
        .map(|(ws, q)| {
            let names: Vec<String> = q.iter().map(ToString::to_string).collect();
            vec![ws.to_string(), if names.is_empty() { "-".into() } else { names.join(" ") }]
        })
        .collect();
    table(&mut out, &["WORKSHOP", "QUEUE"], &rows);
    out
}

pub fn hours_text(r: &WorkHoursReport) -> String {
    let mut out = format!(
        "operator {}  window [{}, {})\n",
        r.operator, r.window.start, r.window.end
    );
    let rows: Vec<Vec<String>> = r
        .sessions
        .iter()
        .map(|s| {
            vec![
                s.start.to_string(),
                s.end.to_string(),
                format_hours(s.duration_ms()),
                if s.incomplete { "yes".into() } else { "no".into() },
            ]
        })
        .collect();
    table(&mut out, &["START_MS", "END_MS", "HOURS", "INCOMPLETE"], &rows);
    let _ = writeln!(out, "total {} h", r.total_hours());
    out
}

pub fn utilization_text(r: &UtilizationReport) -> String {
    let mut out = format!("machine {}  window [{}, {})\n", r.machine, r.window.start, r.window.end);
    let rows: Vec<Vec<String>> = r
        .segments
        .iter()
        .map(|s| {
            vec![
                s.operator.to_string(),
                s.start.to_string(),
                s.end.to_string(),
                format_hours(s.end.0 - s.start.0),
            ]
        })
        .collect();
    table(&mut out, &["OPERATOR", "START_MS", "END_MS", "HOURS"], &rows);
    let _ = writeln!(out, "busy {} h  utilization {:.3}", format_hours(r.busy_ms), r.utilization);
    out
}
