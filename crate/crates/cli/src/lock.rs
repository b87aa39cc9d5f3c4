//! One run per output directory: a lock file blocks concurrent writers and a
//! finished manifest blocks reuse.

use proplm::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Held for the lifetime of a run; the lock file disappears on drop. A
/// crashed run leaves the file behind on purpose, so a human decides whether
/// the directory's contents are trustworthy.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(out: &Path) -> Result<RunLock> {
        fs::create_dir_all(out)?;
        if out.join("manifest.json").exists() {
            return Err(Error::Config(format!(
                "output directory {} already holds a completed run; use a fresh directory",
                out.display()
            )));
        }
        let path = out.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Config(format!(
                    "output directory {} is already in use; remove {} if no run is active",
                    out.display(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
