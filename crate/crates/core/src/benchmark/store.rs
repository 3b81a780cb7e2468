//! Append-only JSONL persistence of run records.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::warn;

use super::{RunKey, RunRecord};
use crate::error::{ApemoError, Result};

/// One block's record file. Existing records are loaded on open so a rerun
/// can skip completed cells.
#[derive(Debug)]
pub struct RunStore {
    path: PathBuf,
    existing: HashMap<RunKey, RunRecord>,
    writer: Mutex<BufWriter<File>>,
}

impl RunStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| ApemoError::io(dir, e))?;
        }
        let (records, good_len, open_line) = if path.exists() {
            read_records_tolerant(&path)?
        } else {
            (Vec::new(), 0, false)
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ApemoError::io(&path, e))?;
        // Drop a torn trailing line left by an interrupted write.
        if file.metadata().map_err(|e| ApemoError::io(&path, e))?.len() != good_len {
            warn!("{}: truncating partial trailing record", path.display());
            file.set_len(good_len).map_err(|e| ApemoError::io(&path, e))?;
        }
        let mut writer = BufWriter::new(file);
        if open_line {
            writeln!(writer).map_err(|e| ApemoError::io(&path, e))?;
        }
        let mut existing = HashMap::new();
        for r in records {
            existing.entry(r.run_key()).or_insert(r);
        }
        Ok(Self {
            path,
            existing,
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &RunKey) -> Option<&RunRecord> {
        self.existing.get(key)
    }

    pub fn len(&self) -> usize {
        self.existing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.existing.is_empty()
    }

    pub fn append(&self, record: &RunRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        let mut w = self.writer.lock().expect("store writer poisoned");
        writeln!(w, "{line}")
            .and_then(|_| w.flush())
            .map_err(|e| ApemoError::io(&self.path, e))
    }
}

/// Read every record of a JSONL file, failing on any malformed line.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ApemoError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: RunRecord = serde_json::from_str(l).map_err(|e| {
                ApemoError::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            r.check_schema()?;
            Ok(r)
        })
        .collect()
}

/// Like [`read_records`] but a final line without a newline that fails to
/// parse is ignored. Returns the records, the byte length of the intact
/// prefix, and whether that prefix lacks a closing newline.
fn read_records_tolerant(path: &Path) -> Result<(Vec<RunRecord>, u64, bool)> {
    let text = fs::read_to_string(path).map_err(|e| ApemoError::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0usize;
    let mut open_line = false;
    for (i, chunk) in text.split_inclusive('\n').enumerate() {
        let complete = chunk.ends_with('\n');
        let line = chunk.trim();
        if !line.is_empty() {
            match serde_json::from_str::<RunRecord>(line) {
                Ok(r) => {
                    r.check_schema()?;
                    out.push(r);
                }
                Err(_) if !complete => break,
                Err(e) => {
                    return Err(ApemoError::InvalidInput(format!(
                        "{}:{}: {e}",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        offset += chunk.len();
        open_line = !complete && !line.is_empty();
    }
    Ok((out, offset as u64, open_line))
}
