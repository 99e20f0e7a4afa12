//! Reviewer flags on concepts, kept as an append-only JSON-lines journal
//! inside the run directory.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FLAGS_FILE: &str = "flags.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagEntry {
    /// Combined concept id.
    pub concept: usize,
    pub flagged: bool,
    #[serde(default)]
    pub note: String,
    /// Seconds since the Unix epoch.
    #[serde(default)]
    pub timestamp: u64,
}

#[derive(Debug)]
pub struct FlagStore {
    path: PathBuf,
    state: BTreeMap<usize, FlagEntry>,
}

impl FlagStore {
    /// Opens the journal in `run_dir`; a missing journal is an empty store.
    pub fn open(run_dir: impl AsRef<Path>) -> Result<Self> {
        let path = run_dir.as_ref().join(FLAGS_FILE);
        let mut state = BTreeMap::new();
        if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let entry: FlagEntry = serde_json::from_str(line).map_err(|e| Error::json(&path, e))?;
                state.insert(entry.concept, entry);
            }
        }
        Ok(Self { path, state })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one entry and applies it. A zero timestamp is replaced by
    /// the current time.
    pub fn append(&mut self, mut entry: FlagEntry) -> Result<FlagEntry> {
        if entry.timestamp == 0 {
            entry.timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        }
        let line = serde_json::to_string(&entry).map_err(|e| Error::json(&self.path, e))?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        file.sync_data().map_err(|e| Error::io(&self.path, e))?;
        self.state.insert(entry.concept, entry.clone());
        Ok(entry)
    }

    /// Latest entry per concept, ordered by concept id.
    pub fn current(&self) -> Vec<FlagEntry> {
        self.state.values().cloned().collect()
    }

    /// Concepts whose latest entry is flagged, ascending.
    pub fn flagged(&self) -> Vec<usize> {
        self.state.values().filter(|e| e.flagged).map(|e| e.concept).collect()
    }
}
