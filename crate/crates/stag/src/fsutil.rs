//! Small filesystem helpers with path-carrying errors and atomic writes.

use std::fs;
use std::path::Path;

use crate::error::{Result, StagError};

/// Write via a temporary sibling then rename, so a crash never leaves a
/// half-written artifact and re-runs are byte-idempotent.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| StagError::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| StagError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| StagError::io(path, e))?;
    Ok(())
}

pub fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| StagError::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| StagError::io(path, e))
}
