use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, StudyConfig};
use crate::cells::ArchKind;
use crate::tuner::HpConfig;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const RESULTS_FORMAT: &str = "rnnlab-results";
pub const RESULTS_VERSION: u32 = 1;

/// First line of a results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub format: String,
    pub version: u32,
    pub study: String,
    pub config_hash: String,
    /// The study config with `output` cleared; the log's directory is
    /// its output.
    pub config: StudyConfig,
}

/// One completed trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub study: String,
    pub config_hash: String,
    /// `arch/d<depth>/h<n_h>`.
    pub group: String,
    pub arch: ArchKind,
    pub depth: usize,
    pub n_params: usize,
    pub n_h: usize,
    pub trial: usize,
    pub seed: u64,
    pub feasible: bool,
    /// Validation objective the tuner saw; absent when infeasible.
    pub objective: Option<f64>,
    /// The same objective on the evaluation set.
    pub eval_objective: Option<f64>,
    /// Optimizer updates applied.
    pub steps: usize,
    pub hp: HpConfig,
    /// Task metrics of the validation pass (e.g. `p`, `mi_bits`, `bpp`)
    /// plus `eval_loss`.
    pub extras: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub group: String,
    pub trial: usize,
    pub wall_time: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A 64-bit seed from the SHA-256 of the joined parts.
pub fn derive_seed(parts: &[&str]) -> u64 {
    let digest = Sha256::digest(parts.join("\u{1f}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Drops a trailing partial line left by an interrupted write.
pub fn truncate_partial_line(path: &Path) -> Result<(), HarnessError> {
    let bytes = fs::read(path)?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

/// Reads a results log: header and every row.
pub fn read_results(path: &Path) -> Result<(ResultsHeader, Vec<ResultRow>), HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header: ResultsHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(HarnessError::Format(format!("{} is empty", path.display()))),
    };
    if header.format != RESULTS_FORMAT || header.version != RESULTS_VERSION {
        return Err(HarnessError::Format(format!(
            "unsupported results format {} v{}",
            header.format, header.version
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ResultRow = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Format(format!("line {}: {e}", i + 2)))?;
        if row.config_hash != header.config_hash {
            return Err(HarnessError::ConfigMismatch {
                expected: header.config_hash.clone(),
                found: row.config_hash,
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub(super) fn append_line<T: Serialize>(file: &mut File, value: &T) -> Result<(), HarnessError> {
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}
