//! Artifact emission: CSV tables, the run manifest, and checksum
//! verification.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a rerun
//! with the same configuration and seed produces byte-identical files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// Collects artifacts for one run directory and records their checksums.
pub struct ArtifactSet {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub master_seed: u64,
    pub config_sha256: String,
    pub artifacts: Vec<ManifestEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

impl ArtifactSet {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.entries.push(ManifestEntry {
            file: name.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len(),
        });
        Ok(())
    }

    /// CSV from a header and rows of already-formatted cells.
    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let mut out = String::new();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        self.write(name, out.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Write the manifest last; it indexes everything emitted so far.
    pub fn finish(mut self, kind: &str, master_seed: u64, config_json: &str) -> Result<Manifest> {
        self.entries.sort_by(|a, b| a.file.cmp(&b.file));
        let manifest = Manifest {
            kind: kind.to_string(),
            master_seed,
            config_sha256: sha256_hex(config_json.as_bytes()),
            artifacts: self.entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_NAME);
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(manifest)
    }
}

/// Re-hash every artifact listed in a manifest; any mismatch is an error.
pub fn verify_manifest(manifest_path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(manifest_path)
        .with_context(|| format!("cannot read {}", manifest_path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse {}", manifest_path.display()))?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    for entry in &manifest.artifacts {
        let path = dir.join(&entry.file);
        let bytes =
            std::fs::read(&path).with_context(|| format!("missing artifact {}", path.display()))?;
        if bytes.len() != entry.bytes {
            bail!(
                "{}: size {} does not match manifest ({})",
                entry.file,
                bytes.len(),
                entry.bytes
            );
        }
        let digest = sha256_hex(&bytes);
        if digest != entry.sha256 {
            bail!("{}: checksum mismatch", entry.file);
        }
    }
    Ok(manifest)
}

/// Shortest round-trip float formatting shared by all tables.
pub fn fmt(value: f64) -> String {
    format!("{value}")
}
