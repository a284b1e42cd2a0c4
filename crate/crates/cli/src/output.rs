//! Run directories: written into a staging directory and swapped in on commit,
//! so a rerun never leaves a half-updated directory behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub struct Staging {
    target: PathBuf,
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

fn sibling(target: &Path, suffix: &str) -> PathBuf {
    let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    target.with_file_name(format!(".{name}.{suffix}"))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Staging {
    pub fn new(target: &Path) -> Result<Staging, CliError> {
        if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CliError::io("creating output parent", e))?;
        }
        let dir = sibling(target, "staging");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io("clearing stale staging dir", e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| CliError::io("creating staging dir", e))?;
        Ok(Staging {
            target: target.to_path_buf(),
            dir,
            files: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        fs::write(self.path(name), contents.as_ref()).map_err(|e| CliError::io(name, e))?;
        self.files.insert(name.to_string(), sha256_hex(contents.as_ref()));
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }

    /// Records a file some other writer produced inside the staging directory.
    pub fn adopt(&mut self, name: &str) -> Result<(), CliError> {
        let digest = sha256_file(&self.path(name)).map_err(|e| CliError::io(name, e))?;
        self.files.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn digests(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    /// Replaces the target directory with the staged one.
    pub fn commit(self) -> Result<PathBuf, CliError> {
        let old = sibling(&self.target, "old");
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| CliError::io("clearing old output", e))?;
        }
        if self.target.exists() {
            fs::rename(&self.target, &old).map_err(|e| CliError::io("moving previous output aside", e))?;
        }
        fs::rename(&self.dir, &self.target).map_err(|e| CliError::io("publishing output", e))?;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| CliError::io("removing previous output", e))?;
        }
        Ok(self.target)
    }
}
