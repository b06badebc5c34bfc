//! Atomic file output: every artifact is written to a hidden temp file in
//! the destination directory and renamed into place, so an interrupted run
//! never leaves a partially written file under the final name.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Env var naming a final file basename; when set, the process exits with
/// code 41 immediately before renaming that file into place. Exists so tests
/// can interrupt a run between write and publish.
pub const FAULT_EXIT_BEFORE_RENAME: &str = "BIASLENS_FAULT_EXIT_BEFORE_RENAME";

/// A fully written temp file awaiting its rename to the final path.
pub struct StagedFile {
    temp: PathBuf,
    final_path: PathBuf,
}

fn temp_path(final_path: &Path) -> io::Result<PathBuf> {
    let name = final_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    Ok(final_path.with_file_name(format!(".{name}.tmp")))
}

/// Write `bytes` next to `final_path` under a temp name. Nothing appears at
/// `final_path` until [`StagedFile::commit`] runs.
pub fn stage(final_path: &Path, bytes: &[u8]) -> io::Result<StagedFile> {
    if let Some(dir) = final_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let temp = temp_path(final_path)?;
    fs::write(&temp, bytes)?;
    Ok(StagedFile { temp, final_path: final_path.to_path_buf() })
}

impl StagedFile {
    /// Publish the staged bytes at the final path via rename.
    pub fn commit(self) -> io::Result<()> {
        if let (Ok(target), Some(name)) = (
            std::env::var(FAULT_EXIT_BEFORE_RENAME),
            self.final_path.file_name().and_then(|n| n.to_str()),
        ) {
            if target == name {
                std::process::exit(41);
            }
        }
        fs::rename(&self.temp, &self.final_path)
    }
}

/// Stage and immediately commit.
pub fn write_atomic(final_path: &Path, bytes: &[u8]) -> io::Result<()> {
    stage(final_path, bytes)?.commit()
}
