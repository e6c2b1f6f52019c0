//! Provenance records written next to every report.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub inputs: Vec<InputDigest>,
    pub config: serde_json::Value,
    /// Seconds since the Unix epoch at start.
    pub started_at: u64,
    pub wall_clock_seconds: f64,
}

/// SHA-256 of a file, read in chunks.
pub fn digest_file(path: impl AsRef<Path>) -> Result<InputDigest> {
    let path = path.as_ref();
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = match f.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        };
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// `report.csv` -> `report.csv.manifest.json`.
pub fn manifest_path(report: impl AsRef<Path>) -> PathBuf {
    let mut s = report.as_ref().as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

impl RunManifest {
    pub fn write_beside(&self, report: impl AsRef<Path>) -> Result<PathBuf> {
        let path = manifest_path(report);
        let text = serde_json::to_string_pretty(self).map_err(io::Error::from)?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
