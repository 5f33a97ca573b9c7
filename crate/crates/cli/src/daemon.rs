//! Central daemon: a single writer thread owns the central unit; one reader
//! thread per TCP connection decodes frames and hands scans to the writer.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use log::{debug, error, info, warn};
use omams_core::central::{Central, CentralError, Notification};
use omams_core::journal::{recover, JournalError};
use omams_core::protocol::{write_message, FrameReader, ReadError, Role, WireMessage};
use omams_core::registry::{load_registry, Registry};
use omams_core::{ScanEvent, Timestamp};

use crate::config::Config;

const POLL: Duration = Duration::from_millis(25);

#[derive(Debug, thiserror::Error)]
pub enum DaemonError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("journal corrupt at seq {seq}: {detail}")]
    JournalCorrupt { seq: u64, detail: String },
    #[error("journal failure: {0}")]
    Journal(String),
}

impl DaemonError {
    pub fn exit_code(&self) -> u8 {
        match self {
            DaemonError::Config(_) => 1,
            DaemonError::JournalCorrupt { .. } | DaemonError::Journal(_) => 2,
        }
    }
}

impl From<CentralError> for DaemonError {
    fn from(e: CentralError) -> Self {
        match e {
            CentralError::Journal(JournalError::CorruptRecord { seq, detail }) => {
                DaemonError::JournalCorrupt { seq, detail }
            }
            CentralError::Journal(JournalError::SeqGap { got, expected }) => DaemonError::JournalCorrupt {
                seq: got,
                detail: format!("expected seq {expected}"),
            },
            CentralError::Journal(JournalError::TimeRegression { seq, .. }) => DaemonError::JournalCorrupt {
                seq,
                detail: "central_time goes backwards".into(),
            },
            other => DaemonError::Journal(other.to_string()),
        }
    }
}

pub fn wall_clock() -> Timestamp {
    let ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64);
    Timestamp(ms)
}

enum Command {
    Scan {
        event: ScanEvent,
        reply: Sender<WireMessage>,
    },
    Subscribe {
        boards: Sender<WireMessage>,
    },
}

/// Loads the registry and rebuilds the central unit from the journal,
/// truncating a torn final line.
pub fn open_central(cfg: &Config, now: Timestamp) -> Result<Central<File>, DaemonError> {
    let registry = File::open(&cfg.registry)
        .map_err(|e| DaemonError::Config(format!("cannot open registry {}: {e}", cfg.registry.display())))
        .and_then(|f| {
            load_registry(f)
                .map_err(|e| DaemonError::Config(format!("invalid registry {}: {e}", cfg.registry.display())))
        })?;
    open_journal(registry, &cfg.journal, now)
}

fn open_journal(registry: Registry, path: &Path, now: Timestamp) -> Result<Central<File>, DaemonError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(DaemonError::Journal(format!("cannot read {}: {e}", path.display()))),
    };
    let recovered = recover(&bytes);
    if let Some(c) = &recovered.corruption {
        if !c.at_tail {
            return Err(DaemonError::JournalCorrupt {
                seq: c.seq,
                detail: c.detail.clone(),
            });
        }
        warn!(
            "journal {} has a torn final record at byte {}; recovered prefix of {} records ({} bytes)",
            path.display(),
            c.offset,
            recovered.records.len(),
            recovered.valid_len
        );
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| DaemonError::Journal(format!("cannot open {}: {e}", path.display())))?;
    if recovered.valid_len != bytes.len() {
        file.set_len(recovered.valid_len as u64)
            .map_err(|e| DaemonError::Journal(format!("cannot truncate {}: {e}", path.display())))?;
    }
    info!("replaying {} journal records", recovered.records.len());
    Ok(Central::recover(registry, &recovered.records, file, now)?)
}

/// A bound daemon, ready to serve.
pub struct Daemon {
    listener: TcpListener,
    central: Central<File>,
    outbox: BufWriter<File>,
}

impl Daemon {
    /// Replays the journal, then binds the listen address.
    pub fn start(cfg: &Config) -> Result<Daemon, DaemonError> {
        let outbox = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&cfg.outbox)
            .map_err(|e| DaemonError::Config(format!("cannot open outbox {}: {e}", cfg.outbox.display())))?;
        let central = open_central(cfg, wall_clock())?;
        let listener = TcpListener::bind(&cfg.listen_addr)
            .map_err(|e| DaemonError::Config(format!("cannot listen on {}: {e}", cfg.listen_addr)))?;
        Ok(Daemon {
            listener,
            central,
            outbox: BufWriter::new(outbox),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `stop` is set. Returns an error only for journal
    /// failures, which stop the daemon.
    pub fn serve(self, stop: Arc<AtomicBool>) -> Result<(), DaemonError> {
        let Daemon {
            listener,
            central,
            outbox,
        } = self;
        let (tx, rx) = mpsc::channel();
        let writer_stop = Arc::clone(&stop);
        let writer = thread::spawn(move || writer_loop(central, outbox, rx, writer_stop));

        listener
            .set_nonblocking(true)
            .map_err(|e| DaemonError::Config(format!("listener: {e}")))?;
        while !stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    debug!("connection from {peer}");
                    let tx = tx.clone();
                    thread::spawn(move || {
                        if let Err(e) = connection(stream, tx) {
                            debug!("connection {peer} closed: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => warn!("accept failed: {e}"),
            }
        }
        drop(tx);
        info!("shutting down");
        writer.join().expect("writer thread does not panic")
    }
}

fn writer_loop(
    mut central: Central<File>,
    mut outbox: BufWriter<File>,
    rx: Receiver<Command>,
    stop: Arc<AtomicBool>,
) -> Result<(), DaemonError> {
    let mut subscribers: Vec<Sender<WireMessage>> = Vec::new();
    loop {
        let cmd = match rx.recv_timeout(POLL) {
            Ok(cmd) => cmd,
            Err(RecvTimeoutError::Timeout) if stop.load(Ordering::SeqCst) => return Ok(()),
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => return Ok(()),
        };
        match cmd {
            Command::Subscribe { boards } => {
                let board = WireMessage::Board {
                    board: central.board().clone(),
                };
                if boards.send(board).is_ok() {
                    subscribers.push(boards);
                }
            }
            Command::Scan { event, reply } => {
                let now = central.clamp_time(wall_clock());
                let dispatch = match central.handle_scan(&event, now) {
                    Ok(d) => d,
                    Err(e) => {
                        error!("cannot apply scan {}/{}: {e}", event.unit_id, event.unit_seq);
                        stop.store(true, Ordering::SeqCst);
                        return Err(e.into());
                    }
                };
                let _ = reply.send(dispatch.reply);
                for n in &dispatch.notifications {
                    if let Err(e) = write_outbox(&mut outbox, n) {
                        warn!("outbox write failed: {e}");
                    }
                }
                if let Some(board) = dispatch.board {
                    let msg = WireMessage::Board { board };
                    subscribers.retain(|s| s.send(msg.clone()).is_ok());
                }
            }
        }
    }
}

fn write_outbox(out: &mut BufWriter<File>, n: &Notification) -> io::Result<()> {
    serde_json::to_writer(&mut *out, n)?;
    out.write_all(b"\n")?;
    out.flush()
}

fn connection(stream: TcpStream, tx: Sender<Command>) -> Result<(), ReadError> {
    let mut out = stream.try_clone()?;
    let mut reader = FrameReader::new(stream);
    while let Some(msg) = reader.next_message()? {
        match msg {
            WireMessage::Hello {
                role: Role::Display, ..
            } => return stream_boards(out, tx),
            WireMessage::Hello { .. } => {}
            WireMessage::Ping => write_message(&mut out, &WireMessage::Pong)?,
            WireMessage::Scan { scan } => {
                let (reply_tx, reply_rx) = mpsc::channel();
                if tx.send(Command::Scan { event: scan, reply: reply_tx }).is_err() {
                    return Ok(());
                }
                match reply_rx.recv() {
                    Ok(reply) => write_message(&mut out, &reply)?,
                    Err(_) => return Ok(()),
                }
            }
            other => debug!("ignoring unexpected {} message", other.type_name()),
        }
    }
    Ok(())
}

fn stream_boards(mut out: TcpStream, tx: Sender<Command>) -> Result<(), ReadError> {
    let (boards_tx, boards_rx) = mpsc::channel();
    if tx.send(Command::Subscribe { boards: boards_tx }).is_err() {
        return Ok(());
    }
    drop(tx);
    for board in boards_rx {
        write_message(&mut out, &board)?;
    }
    Ok(())
}
