//! Line-delimited store of grid fits.
//!
//! Each completed `(setting, rep)` is appended as one JSON line and flushed,
//! so an interrupted sweep resumes from the lines already present. A
//! truncated final line is discarded. A sidecar fingerprint guards against
//! resuming under different settings.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use bpgwsp_core::simgen::GridConfig;
use bpgwsp_core::tune::FitRecord;
use serde::{Deserialize, Serialize};

use crate::io::{read_json, write_atomic, write_json};

/// Everything that determines the content of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreFingerprint {
    pub seed: u64,
    pub grid: GridConfig,
    pub chains: usize,
    pub iters: usize,
    pub burnin: usize,
    pub levels: Vec<f64>,
}

pub struct RecordStore {
    path: PathBuf,
    file: Mutex<File>,
}

pub type RecordMap = BTreeMap<(usize, usize), FitRecord>;

impl RecordStore {
    /// Opens the store under `dir`, returning the records already completed.
    pub fn open(dir: &Path, fingerprint: &StoreFingerprint) -> Result<(Self, RecordMap)> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join("records.jsonl");
        let meta = dir.join("records.meta.json");
        let done = if path.exists() {
            let recorded: StoreFingerprint = read_json(&meta)
                .with_context(|| format!("{} exists without a readable fingerprint", path.display()))?;
            if &recorded != fingerprint {
                bail!(
                    "{} was produced with different settings; use a fresh output directory",
                    path.display()
                );
            }
            load_records(&path)?
        } else {
            write_json(&meta, fingerprint)?;
            RecordMap::new()
        };
        // rewrite to drop a truncated tail before appending
        write_atomic(&path, &records_jsonl(done.values())?)?;
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .with_context(|| format!("cannot append to {}", path.display()))?;
        Ok((
            RecordStore {
                path,
                file: Mutex::new(file),
            },
            done,
        ))
    }

    pub fn append(&self, record: &FitRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut f = self.file.lock().expect("store lock poisoned");
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .with_context(|| format!("cannot append to {}", self.path.display()))
    }

    /// Rewrites the store in key order.
    pub fn finalize(self, records: &RecordMap) -> Result<()> {
        drop(self.file);
        write_atomic(&self.path, &records_jsonl(records.values())?)
    }
}

pub fn load_records(path: &Path) -> Result<RecordMap> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let complete_tail = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = RecordMap::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<FitRecord>(line) {
            Ok(r) => {
                out.insert(r.key(), r);
            }
            Err(_) if i + 1 == lines.len() && !complete_tail => break,
            Err(e) => bail!("{}:{}: corrupt record: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn records_jsonl<'a>(records: impl Iterator<Item = &'a FitRecord>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}
