//! Run checkpoints.
//!
//! Layout (little-endian): `"CKP1"`, config hash `u64`, config text as a
//! length-prefixed block, next task index `u64`, completed units `u64`,
//! row count `u64` followed by each CSV row as a block, then a presence
//! flag and a block holding the experiment's mid-task state.

use std::path::Path;

use hotsketch::codec::{Decoder, Encoder};
use thiserror::Error;

use crate::config::config_hash;
use crate::error::CliError;

const MAGIC: &[u8; 4] = b"CKP1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a run checkpoint or unsupported layout")]
    VersionMismatch,
    #[error("corrupt checkpoint: {0}")]
    CorruptState(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunState {
    pub config_text: String,
    /// Index of the first unfinished task.
    pub task: usize,
    /// Units of work done so far across all tasks.
    pub units: u64,
    /// CSV rows emitted so far, without header.
    pub rows: Vec<String>,
    /// Mid-task state of task `task`, if it was interrupted.
    pub partial: Option<Vec<u8>>,
}

impl RunState {
    pub fn new(config_text: impl Into<String>) -> Self {
        Self { config_text: config_text.into(), ..Self::default() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::with_magic(MAGIC);
        enc.u64(config_hash(&self.config_text))
            .block(self.config_text.as_bytes())
            .usize(self.task)
            .u64(self.units)
            .usize(self.rows.len());
        for row in &self.rows {
            enc.block(row.as_bytes());
        }
        enc.bool(self.partial.is_some());
        if let Some(p) = &self.partial {
            enc.block(p);
        }
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let corrupt = |what: &str| CheckpointError::CorruptState(what.to_string());
        let mut dec = Decoder::new(bytes);
        if !dec.magic(MAGIC).map_err(|_| CheckpointError::VersionMismatch)? {
            return Err(CheckpointError::VersionMismatch);
        }
        let hash = dec.u64().map_err(|_| corrupt("truncated header"))?;
        let text = dec.block().map_err(|_| corrupt("truncated config"))?;
        let config_text = String::from_utf8(text.to_vec()).map_err(|_| corrupt("config text is not UTF-8"))?;
        if config_hash(&config_text) != hash {
            return Err(corrupt("config hash does not match embedded config"));
        }
        let task = dec.usize().map_err(|_| corrupt("truncated task index"))?;
        let units = dec.u64().map_err(|_| corrupt("truncated unit count"))?;
        let count = dec.usize().map_err(|_| corrupt("truncated row count"))?;
        dec.check_len(count, 8).map_err(|_| corrupt("row count exceeds data"))?;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let row = dec.block().map_err(|_| corrupt("truncated row"))?;
            rows.push(String::from_utf8(row.to_vec()).map_err(|_| corrupt("row is not UTF-8"))?);
        }
        let partial = match dec.bool().map_err(|_| corrupt("truncated state flag"))? {
            true => Some(dec.block().map_err(|_| corrupt("truncated task state"))?.to_vec()),
            false => None,
        };
        if !dec.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { config_text, task, units, rows, partial })
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.encode()).map_err(CliError::io(&tmp))?;
        std::fs::rename(&tmp, path).map_err(CliError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        Ok(Self::decode(&bytes)?)
    }
}
