// SPDX-License-Identifier: Apache-2.0

//! File helpers and the provenance record stamped on every output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL: &str = "fipgraph";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Who produced a file and from what. Contains no timestamps, so identical
/// runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Provenance {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            command: command.to_string(),
            config,
            inputs: Vec::new(),
        }
    }

    pub fn with_input(mut self, path: impl Into<String>, bytes: &[u8]) -> Self {
        self.inputs.push(InputDigest {
            path: path.into(),
            sha256: sha256_hex(bytes),
        });
        self
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }

    /// One `# {...}` line for the head of a CSV file.
    pub fn csv_comment(&self) -> String {
        format!("# {}\n", serde_json::to_string(self).expect("provenance serializes"))
    }
}

/// Strips leading `#` comment lines.
pub fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert!(!dir.path().join("sub/out.txt.tmp").exists());
    }

    #[test]
    fn comment_line_roundtrip() {
        let p = Provenance::new("simulate", serde_json::json!({"seed": 3})).with_input("a.bench", b"x");
        let line = p.csv_comment();
        assert!(line.starts_with("# {"));
        let back: Provenance = serde_json::from_str(line[2..].trim()).unwrap();
        assert_eq!(back, p);
        assert_eq!(strip_comments(&format!("{line}a,b\n")), "a,b\n");
    }
}
