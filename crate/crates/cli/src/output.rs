use std::fs;
use std::path::{Path, PathBuf};

use xalign::{Error, Result};

/// Write-once guard over a command's outputs.
///
/// Every output is claimed before any computation, so a refused overwrite
/// costs nothing and leaves the filesystem untouched.
#[derive(Debug)]
pub struct Outputs {
    force: bool,
    inputs: Vec<PathBuf>,
    claimed: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(force: bool) -> Self {
        Outputs {
            force,
            inputs: Vec::new(),
            claimed: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        if let Ok(p) = path.canonicalize() {
            self.inputs.push(p);
        }
    }

    pub fn claim(&mut self, path: &Path) -> Result<PathBuf> {
        if self.claimed.iter().any(|p| p == path) {
            return Err(Error::Validation(format!(
                "output {} is named twice",
                path.display()
            )));
        }
        if path.exists() {
            let canonical = path.canonicalize().map_err(|e| Error::Io {
                path: path.to_owned(),
                source: e,
            })?;
            if self.inputs.contains(&canonical) {
                return Err(Error::Validation(format!(
                    "output {} would overwrite an input",
                    path.display()
                )));
            }
            if !self.force {
                return Err(Error::Validation(format!(
                    "refusing to overwrite {} (pass --force)",
                    path.display()
                )));
            }
        }
        self.claimed.push(path.to_owned());
        Ok(path.to_owned())
    }
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.to_owned(),
                source: e,
            })
        }
        _ => Ok(()),
    }
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

/// `path` with `suffix` appended to the file name.
pub fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}
