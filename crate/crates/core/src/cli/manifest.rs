//! Run manifests: file inventory with SHA-256 checksums.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::output::write_atomic;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_hash: String,
    pub version: String,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
    pub failure: Option<String>,
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        let name = e.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || name == MANIFEST {
            continue;
        }
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Every file below `dir` except hidden files and manifests,
/// sorted by relative path.
pub fn inventory(dir: &Path) -> Result<Vec<FileEntry>> {
    let mut paths = Vec::new();
    collect(dir, &mut paths)?;
    paths
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let rel = p.strip_prefix(dir).unwrap_or(&p);
            Ok(FileEntry {
                path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

impl RunManifest {
    pub fn write(
        dir: &Path,
        stage: &str,
        config_hash: &str,
        wall_time_s: f64,
        failure: Option<String>,
    ) -> Result<Self> {
        let m = Self {
            stage: stage.into(),
            config_hash: config_hash.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            wall_time_s,
            files: inventory(dir)?,
            failure,
        };
        let json = serde_json::to_string_pretty(&m).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&dir.join(MANIFEST), json.as_bytes())?;
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
    }

    /// Files whose current checksum differs from the inventory.
    pub fn stale(&self, dir: &Path) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for f in &self.files {
            let p = dir.join(&f.path);
            if !p.exists() || file_sha256(&p)? != f.sha256 {
                out.push(f.path.clone());
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_matches_disk() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.csv"), "1\n").unwrap();
        fs::create_dir(dir.path().join("ym")).unwrap();
        fs::write(dir.path().join("ym/a.bin"), [0u8, 1]).unwrap();
        let m = RunManifest::write(dir.path(), "run", "h", 0.5, None).unwrap();
        let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(names, ["b.csv", "ym/a.bin"]);
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        assert!(back.stale(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("b.csv"), "2\n").unwrap();
        assert_eq!(back.stale(dir.path()).unwrap(), ["b.csv"]);
    }
}
