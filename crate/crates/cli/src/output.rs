//! All-or-nothing output: files are written into a staging directory and
//! moved into place only when the command succeeds. A failed command leaves
//! a `<command>.partial` marker holding the error instead.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct Staging {
    target: PathBuf,
    dir: PathBuf,
    command: &'static str,
}

impl Staging {
    pub fn new(target: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(target)
            .with_context(|| format!("creating output directory {}", target.display()))?;
        let dir = target.join(format!(".{command}.staging"));
        if dir.exists() {
            fs::remove_dir_all(&dir)
                .with_context(|| format!("clearing {}", dir.display()))?;
        }
        fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            target: target.to_path_buf(),
            dir,
            command,
        })
    }

    /// Where to write; paths are relative to the final output directory.
    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn marker(&self) -> PathBuf {
        self.target.join(format!("{}.partial", self.command))
    }

    /// Moves every staged entry into the output directory.
    pub fn commit(self) -> Result<()> {
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let dest = self.target.join(entry.file_name());
            if dest.is_dir() {
                fs::remove_dir_all(&dest)?;
            }
            fs::rename(entry.path(), &dest)
                .with_context(|| format!("moving output to {}", dest.display()))?;
        }
        fs::remove_dir(&self.dir)?;
        let marker = self.marker();
        if marker.exists() {
            fs::remove_file(marker)?;
        }
        Ok(())
    }

    /// Discards staged files and records the failure.
    pub fn abort(self, err: &anyhow::Error) {
        let _ = fs::remove_dir_all(&self.dir);
        let _ = fs::write(self.marker(), format!("{err:#}\n"));
    }
}

/// Runs `body` against a staging directory, committing on success.
pub fn staged<T>(
    target: &Path,
    command: &'static str,
    body: impl FnOnce(&Path) -> Result<T>,
) -> Result<T> {
    let staging = Staging::new(target, command)?;
    match body(staging.path()) {
        Ok(v) => {
            staging.commit()?;
            Ok(v)
        }
        Err(e) => {
            staging.abort(&e);
            Err(e)
        }
    }
}

/// Writes a single file through a temporary sibling.
pub fn write_file_atomic(path: &Path, command: &'static str, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let marker = path.with_file_name(format!(
        "{}.{command}.partial",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("output")
    ));
    let result = fs::write(&tmp, contents)
        .and_then(|_| fs::rename(&tmp, path))
        .with_context(|| format!("writing {}", path.display()));
    match result {
        Ok(()) => {
            if marker.exists() {
                let _ = fs::remove_file(marker);
            }
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            let _ = fs::write(&marker, format!("{e:#}\n"));
            Err(e)
        }
    }
}
