//! Scan-unit and display clients.

use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use log::debug;
use omams_core::protocol::{write_message, FrameReader, ReadError, RetryPolicy, Role, WireMessage};
use omams_core::{ScanEvent, UnitId};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("central unit unreachable after {attempts} attempts: {last}")]
    Unreachable { attempts: u32, last: String },
    #[error("connection closed by central unit")]
    Closed,
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn connect(addr: &str, timeout: Duration) -> io::Result<TcpStream> {
    let mut last = io::Error::new(io::ErrorKind::NotFound, format!("{addr} resolves to no address"));
    for sa in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&sa, timeout) {
            Ok(s) => return Ok(s),
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn exchange(addr: &str, scan: &ScanEvent, timeout: Duration) -> Result<WireMessage, ClientError> {
    let mut stream = connect(addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    write_message(
        &mut stream,
        &WireMessage::Hello {
            unit_id: scan.unit_id.clone(),
            role: Role::Scan,
        },
    )?;
    write_message(&mut stream, &WireMessage::Scan { scan: scan.clone() })?;
    let mut reader = FrameReader::new(stream);
    while let Some(msg) = reader.next_message()? {
        match &msg {
            WireMessage::Ack { unit_seq, .. } | WireMessage::Reject { unit_seq, .. } if *unit_seq == scan.unit_seq => {
                return Ok(msg)
            }
            _ => {}
        }
    }
    Err(ClientError::Closed)
}

/// Sends one scan and waits for its ack or reject, retransmitting on the
/// retry policy's backoff. Retransmissions reuse the sequence number, so
/// the central unit applies the scan at most once.
pub fn send_scan(
    addr: &str,
    scan: &ScanEvent,
    attempts: u32,
    policy: RetryPolicy,
    timeout: Duration,
) -> Result<WireMessage, ClientError> {
    let attempts = attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        match exchange(addr, scan, timeout) {
            Ok(reply) => return Ok(reply),
            Err(e) => {
                debug!("attempt {attempt} failed: {e}");
                last = e.to_string();
            }
        }
        if attempt < attempts {
            thread::sleep(Duration::from_millis(policy.backoff_ms(attempt)));
        }
    }
    Err(ClientError::Unreachable { attempts, last })
}

/// Subscribes to board updates; calls `on_board` for each until it returns
/// false or the connection ends.
pub fn watch_boards(
    addr: &str,
    unit: &UnitId,
    timeout: Duration,
    mut on_board: impl FnMut(WireMessage) -> bool,
) -> Result<(), ClientError> {
    let mut stream = connect(addr, timeout).map_err(|e| ClientError::Unreachable {
        attempts: 1,
        last: e.to_string(),
    })?;
    write_message(
        &mut stream,
        &WireMessage::Hello {
            unit_id: unit.clone(),
            role: Role::Display,
        },
    )?;
    let mut reader = FrameReader::new(stream);
    while let Some(msg) = reader.next_message()? {
        if matches!(msg, WireMessage::Board { .. }) && !on_board(msg) {
            return Ok(());
        }
    }
    Err(ClientError::Closed)
}
