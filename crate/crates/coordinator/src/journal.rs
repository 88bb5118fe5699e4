//! Append-only journal of state transitions.
//!
//! The file is a sequence of frames in the wire format (`[len:u32 BE][JSON]`),
//! one per [`JournalEntry`]. Each entry carries a SHA-256 checksum over its
//! sequence number and event. A damaged final entry is a torn write and is
//! dropped on open; damage anywhere else is fatal.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xw_common::{digest_parts, Digest, Timestamp};
use xw_protocol::frame::{encode_frame, split_frame, FrameError};
use xw_protocol::{AppKind, Blob, PlatformRequirements, Retention, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum JournalEvent {
    UserAdded {
        login: String,
        password_digest: Digest,
        role: Role,
    },
    UserRevoked {
        login: String,
    },
    AppRegistered {
        app_ref: String,
        kind: AppKind,
        digest: Digest,
        payload: Blob,
    },
    TaskSubmitted {
        task_id: String,
        owner: String,
        label: String,
        app_ref: String,
        params: Blob,
        requirements: PlatformRequirements,
        retention: Retention,
        submitted_at: Timestamp,
        sequence_no: u64,
    },
    TaskScheduled {
        task_id: String,
        worker_id: String,
        at: Timestamp,
        txid: String,
    },
    TaskRescheduled {
        task_id: String,
        attempt: u32,
    },
    TaskAborted {
        task_id: String,
        reason: String,
    },
    ResultStored {
        task_id: String,
        worker_id: String,
        payload: Blob,
        received_at: Timestamp,
        txid: String,
    },
    ResultFetched {
        task_id: String,
    },
    ResultDiscarded {
        task_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub event: JournalEvent,
    pub checksum: String,
}

impl JournalEntry {
    pub fn new(seq: u64, event: JournalEvent) -> Self {
        let checksum = checksum(seq, &event).to_hex();
        JournalEntry { seq, event, checksum }
    }

    pub fn is_intact(&self) -> bool {
        checksum(self.seq, &self.event).to_hex() == self.checksum
    }

    pub fn to_frame(&self) -> Vec<u8> {
        encode_frame(&serde_json::to_vec(self).expect("journal entries serialize"))
    }
}

fn checksum(seq: u64, event: &JournalEvent) -> Digest {
    let body = serde_json::to_vec(event).expect("journal events serialize");
    digest_parts([&seq.to_be_bytes()[..], &body])
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt journal entry at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
}

/// What [`Journal::open`] found on disk.
#[derive(Debug, Default)]
pub struct JournalContents {
    pub entries: Vec<JournalEntry>,
    /// Bytes dropped from a torn final entry.
    pub torn_bytes: u64,
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    sync: bool,
    next_seq: u64,
}

impl Journal {
    /// Opens (creating if needed) the journal, validates every entry, drops a
    /// torn tail, and positions for appending.
    pub fn open(path: impl AsRef<Path>, sync: bool) -> Result<(Journal, JournalContents), JournalError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| JournalError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err)?;
        let (contents, valid_len) = parse_entries(&bytes)?;
        if contents.torn_bytes > 0 {
            log::warn!(
                "journal {}: dropping {} bytes of torn final entry",
                path.display(),
                contents.torn_bytes
            );
            file.set_len(valid_len).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }
        let next_seq = contents.entries.last().map_or(1, |e| e.seq + 1);
        Ok((
            Journal {
                path,
                file,
                sync,
                next_seq,
            },
            contents,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Appends one event; returns once it is durable (when syncing is on).
    pub fn append(&mut self, event: JournalEvent) -> Result<JournalEntry, JournalError> {
        let entry = JournalEntry::new(self.next_seq, event);
        let frame = entry.to_frame();
        let io_err = |source| JournalError::Io {
            path: self.path.clone(),
            source,
        };
        let before = self.file.metadata().map_err(io_err)?.len();
        let res = self
            .file
            .write_all(&frame)
            .and_then(|_| if self.sync { self.file.sync_data() } else { Ok(()) });
        if let Err(source) = res {
            // Leave no partial frame behind for the next append to follow.
            let _ = self.file.set_len(before);
            return Err(JournalError::Io {
                path: self.path.clone(),
                source,
            });
        }
        self.next_seq += 1;
        Ok(entry)
    }
}

/// Reads a journal file without opening it for writing.
pub fn read_journal(path: impl AsRef<Path>) -> Result<JournalContents, JournalError> {
    let path = path.as_ref();
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(source) => {
            return Err(JournalError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    Ok(parse_entries(&bytes)?.0)
}

fn parse_entries(bytes: &[u8]) -> Result<(JournalContents, u64), JournalError> {
    let mut contents = JournalContents::default();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let (payload, used) = match split_frame(rest, u32::MAX as usize) {
            Ok(x) => x,
            Err(FrameError::Truncated { .. }) => {
                contents.torn_bytes = rest.len() as u64;
                break;
            }
            Err(e) => {
                return Err(JournalError::Corrupt {
                    offset: offset as u64,
                    reason: e.to_string(),
                })
            }
        };
        let is_last = offset + used == bytes.len();
        let expected_seq = contents.entries.last().map_or(1, |e| e.seq + 1);
        let problem = match serde_json::from_slice::<JournalEntry>(payload) {
            Err(e) => Some(format!("unparseable entry: {e}")),
            Ok(entry) if !entry.is_intact() => Some(format!("checksum mismatch on seq {}", entry.seq)),
            Ok(entry) if entry.seq != expected_seq => {
                Some(format!("sequence gap: expected {expected_seq}, found {}", entry.seq))
            }
            Ok(entry) => {
                contents.entries.push(entry);
                None
            }
        };
        if let Some(reason) = problem {
            if is_last {
                contents.torn_bytes = rest.len() as u64;
                break;
            }
            return Err(JournalError::Corrupt {
                offset: offset as u64,
                reason,
            });
        }
        offset += used;
    }
    let valid_len = (bytes.len() as u64) - contents.torn_bytes;
    Ok((contents, valid_len))
}
