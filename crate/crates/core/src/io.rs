//! Artifact helpers: float formatting, CSV writing and the run manifest.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<PathBuf>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.as_ref().iter().map(|&v| fmt_f64(v)).collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    f.flush()?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(path.to_path_buf())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

/// Lists every artifact (relative to `dir`) with its content hash, together
/// with the effective configuration of the run.
pub fn write_manifest<C: Serialize>(
    dir: &Path,
    artifacts: &[PathBuf],
    effective_config: &C,
) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(artifacts.len());
    for p in artifacts {
        let rel = p
            .strip_prefix(dir)
            .map_err(|_| Error::invalid(format!("artifact {} outside output dir", p.display())))?;
        entries.push(ManifestEntry {
            path: rel.to_string_lossy().into_owned(),
            sha256: sha256_file(p)?,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    #[derive(Serialize)]
    struct Manifest<'a, C> {
        artifacts: Vec<ManifestEntry>,
        effective_config: &'a C,
    }
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            artifacts: entries,
            effective_config,
        },
    )
}

/// Exclusive lock on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                Error::Config(format!(
                    "output directory {} is locked by another run ({e})",
                    dir.display()
                ))
            })?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for &x in &[0.1, 1.0 / 3.0, -2.5e-300, 123456.789, std::f64::consts::PI] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}
