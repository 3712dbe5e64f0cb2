use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::error::CliError;

/// Collects output files in temporary directories next to their
/// destinations and moves them into place only on [`Staging::commit`], so a
/// failed run leaves no partial outputs behind.
#[derive(Default)]
pub struct Staging {
    dirs: BTreeMap<PathBuf, TempDir>,
    moves: Vec<(PathBuf, PathBuf)>,
}

impl Staging {
    /// Creates the staging directory for `dest` without scheduling a file,
    /// so an unwritable destination fails before any work is done.
    pub fn reserve(&mut self, dest: &Path) -> Result<PathBuf, CliError> {
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if !self.dirs.contains_key(&parent) {
            let dir = tempfile::Builder::new()
                .prefix(".uplift-")
                .tempdir_in(&parent)?;
            self.dirs.insert(parent.clone(), dir);
        }
        Ok(self.dirs[&parent].path().to_path_buf())
    }

    /// Path to write instead of `dest`.
    pub fn path_for(&mut self, dest: &Path) -> Result<PathBuf, CliError> {
        let name = dest.file_name().ok_or_else(|| {
            CliError::Usage(format!("output path `{}` has no file name", dest.display()))
        })?;
        let staged = self.reserve(dest)?.join(name);
        self.moves.push((staged.clone(), dest.to_path_buf()));
        Ok(staged)
    }

    pub fn commit(self) -> Result<(), CliError> {
        for (from, to) in &self.moves {
            fs::rename(from, to)?;
        }
        Ok(())
    }
}
