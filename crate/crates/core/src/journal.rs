//! Append-only per-job journal.
//!
//! Each entry is one frame: 4-byte big-endian length, then the JSON entry.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::checkpoint::{rebuild_chains, CheckpointChain, CheckpointError, CheckpointPolicy};
use crate::coordinator::JournalEntry;
use crate::transport::{read_json_frame, write_json_frame, CodecError};

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("journal {path}: {source}")]
    Decode { path: PathBuf, source: CodecError },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug)]
pub struct JournalWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JournalWriter {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JournalError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| JournalError::Io { path: path.clone(), source })?;
        Ok(Self { path, out: BufWriter::new(file) })
    }

    pub fn append(&mut self, entry: &JournalEntry) -> Result<(), JournalError> {
        write_json_frame(&mut self.out, entry)
            .map_err(|source| JournalError::Io { path: self.path.clone(), source })
    }

    pub fn append_all<'a>(
        &mut self,
        entries: impl IntoIterator<Item = &'a JournalEntry>,
    ) -> Result<(), JournalError> {
        for e in entries {
            self.append(e)?;
        }
        self.flush()
    }

    pub fn flush(&mut self) -> Result<(), JournalError> {
        self.out
            .flush()
            .map_err(|source| JournalError::Io { path: self.path.clone(), source })
    }
}

pub fn read_journal(path: impl AsRef<Path>) -> Result<Vec<JournalEntry>, JournalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| JournalError::Io { path: path.into(), source })?;
    let mut reader = BufReader::new(file);
    let mut entries = Vec::new();
    loop {
        match read_json_frame(&mut reader) {
            Ok(Some(e)) => entries.push(e),
            Ok(None) => return Ok(entries),
            Err(source) => return Err(JournalError::Decode { path: path.into(), source }),
        }
    }
}

/// Rebuilds every task's checkpoint chain from journal entries.
pub fn replay_chains(
    entries: &[JournalEntry],
    policy: &CheckpointPolicy,
) -> Result<BTreeMap<u64, CheckpointChain>, JournalError> {
    let records = entries.iter().filter_map(|e| match e {
        JournalEntry::Checkpoint { record } => Some(record.clone()),
        _ => None,
    });
    Ok(rebuild_chains(records, policy)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::TaskState;
    use crate::coordinator::{JobStatus, TaskStatus};

    #[test]
    fn append_read_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("job.journal");
        let policy = CheckpointPolicy::every(1.0).with_threshold(2);
        let mut chain = CheckpointChain::new(4, policy.clone());
        let mut entries = vec![JournalEntry::Task {
            task_id: 4,
            status: TaskStatus::Assigned,
            owner: Some("w".into()),
            attempts: 1,
            at_s: 0.5,
        }];
        for cursor in 1..=5u64 {
            let mut s = TaskState::default();
            s.vars.insert("n".into(), cursor.to_be_bytes().to_vec());
            s.cursor = cursor;
            chain.append(&s, cursor as f64).unwrap();
            entries.push(JournalEntry::Checkpoint { record: chain.records().last().unwrap().clone() });
        }
        entries.push(JournalEntry::Finished { status: JobStatus::Completed, at_s: 9.0 });

        // two sessions append to the same file
        let (a, b) = entries.split_at(3);
        JournalWriter::open(&path).unwrap().append_all(a).unwrap();
        JournalWriter::open(&path).unwrap().append_all(b).unwrap();

        let back = read_journal(&path).unwrap();
        assert_eq!(back, entries);
        let chains = replay_chains(&back, &policy).unwrap();
        assert_eq!(chains[&4].recover().unwrap(), chain.recover().unwrap());
    }

    #[test]
    fn truncated_journal_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.journal");
        let entry = JournalEntry::Finished { status: JobStatus::Failed, at_s: 1.0 };
        JournalWriter::open(&path).unwrap().append_all([&entry]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_journal(&path), Err(JournalError::Decode { .. })));
    }
}
