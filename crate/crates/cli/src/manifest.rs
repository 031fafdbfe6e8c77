//! Stage manifests, content digests, atomic artifact writes, and the
//! output-directory lock.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

/// Record of one completed stage: artifact digests, the input digests the
/// stage saw, and a digest of its parameters. A stage re-runs only when
/// any of these changed (or `--force`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    /// Artifact file name -> sha256 hex digest.
    pub artifacts: BTreeMap<String, String>,
    /// Input file name -> sha256 hex digest at execution time.
    pub inputs: BTreeMap<String, String>,
    pub params_digest: String,
    pub created_utc: u64,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn digest_file(path: &Path) -> std::io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buffer = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buffer)?;
        if n == 0 {
            break;
        }
        hasher.update(&buffer[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Write via a temp file in the same directory, then rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl StageManifest {
    pub fn path_for(out_dir: &Path, stage: &str) -> PathBuf {
        out_dir.join(format!("{stage}.manifest.json"))
    }

    pub fn load(out_dir: &Path, stage: &str) -> std::io::Result<Option<StageManifest>> {
        let path = Self::path_for(out_dir, stage);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        Ok(Some(serde_json::from_str(&text).map_err(std::io::Error::other)?))
    }

    pub fn store(&self, out_dir: &Path) -> std::io::Result<()> {
        let path = Self::path_for(out_dir, &self.stage);
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        atomic_write(&path, text.as_bytes())
    }

    /// True when every artifact this manifest lists still matches its
    /// recorded digest on disk.
    pub fn artifacts_intact(&self, out_dir: &Path) -> bool {
        self.artifacts.iter().all(|(name, digest)| {
            digest_file(&out_dir.join(name)).is_ok_and(|d| &d == digest)
        })
    }
}

/// Exclusive lock on an output directory, released on drop. Prevents two
/// pipeline processes from interleaving writes.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out_dir: &Path) -> std::io::Result<OutputLock> {
        fs::create_dir_all(out_dir)?;
        let path = out_dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(std::io::Error::new(
                std::io::ErrorKind::WouldBlock,
                format!(
                    "output directory is locked by another process (remove {} if stale)",
                    path.display()
                ),
            )),
            Err(e) => Err(e),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_are_stable() {
        assert_eq!(
            digest_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = StageManifest {
            stage: "embed".into(),
            artifacts: [("embeddings.emb1".to_string(), "d".to_string())].into(),
            inputs: BTreeMap::new(),
            params_digest: "p".into(),
            created_utc: 123,
        };
        manifest.store(dir.path()).unwrap();
        let loaded = StageManifest::load(dir.path(), "embed").unwrap().unwrap();
        assert_eq!(loaded, manifest);
        assert!(StageManifest::load(dir.path(), "reduce").unwrap().is_none());
    }

    #[test]
    fn artifact_integrity_check() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.bin"), b"payload").unwrap();
        let manifest = StageManifest {
            stage: "s".into(),
            artifacts: [("a.bin".to_string(), digest_bytes(b"payload"))].into(),
            inputs: BTreeMap::new(),
            params_digest: String::new(),
            created_utc: 0,
        };
        assert!(manifest.artifacts_intact(dir.path()));
        fs::write(dir.path().join("a.bin"), b"tampered").unwrap();
        assert!(!manifest.artifacts_intact(dir.path()));
    }

    #[test]
    fn lock_excludes_second_holder() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(OutputLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("x.json");
        atomic_write(&target, b"{}").unwrap();
        assert_eq!(fs::read(&target).unwrap(), b"{}");
        assert!(!dir.path().join("x.tmp").exists());
    }
}
