//! Run artifacts, buffered in memory and written together with a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ringroad::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct Entry<'a> {
    path: &'a str,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    files: Vec<Entry<'a>>,
}

/// Files of one run keyed by their path relative to the output directory.
pub struct Artifacts {
    command: String,
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn new(command: &str) -> Self {
        Artifacts {
            command: command.to_string(),
            files: BTreeMap::new(),
        }
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.insert(name.to_string(), bytes);
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: String) {
        self.files.insert(name.to_string(), text.into_bytes());
    }

    /// Write every file and the manifest under `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, bytes)?;
            entries.push(Entry {
                path: name,
                bytes: bytes.len(),
                sha256: hex(&Sha256::digest(bytes)),
            });
        }
        let manifest = Manifest {
            command: &self.command,
            files: entries,
        };
        let path = dir.join(MANIFEST);
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes)?;
        Ok(path)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
