use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NavError, Outcome};
use crate::gridmap::Pose;

/// One line of an episode log. Step 0 is the state after reset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub pose: Pose,
    /// `None` for the reset record and for privileged path moves.
    pub action_node: Option<usize>,
    pub reward: f64,
    pub d_goal: f64,
    pub outcome: Outcome,
}

/// Writes records as line-delimited JSON.
pub fn write_episode_log(path: &Path, records: &[LogRecord]) -> Result<(), NavError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| NavError::Log(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_log(path: &Path) -> Result<Vec<LogRecord>, NavError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| NavError::Log(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
