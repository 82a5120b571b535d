//! Content-addressed artifact store with atomic writes and integrity sidecars.
//!
//! Every artifact lives at `<root>/<kind>/<key>.<ext>`, where the key hashes
//! the configuration that produced it, and is accompanied by
//! `<file>.sha256` holding the hash of its content. A file whose content no
//! longer matches its sidecar is reported instead of silently reused.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::digest::sha256_hex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Data,
    Scores,
    Prunes,
    Caches,
    Models,
    Reports,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 6] = [
        ArtifactKind::Data,
        ArtifactKind::Scores,
        ArtifactKind::Prunes,
        ArtifactKind::Caches,
        ArtifactKind::Models,
        ArtifactKind::Reports,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            ArtifactKind::Data => "data",
            ArtifactKind::Scores => "scores",
            ArtifactKind::Prunes => "prunes",
            ArtifactKind::Caches => "caches",
            ArtifactKind::Models => "models",
            ArtifactKind::Reports => "reports",
        }
    }
}

/// A value read from or written to the store, with its content hash.
#[derive(Debug, Clone)]
pub struct Stored<T> {
    pub value: T,
    pub hash: String,
    pub path: PathBuf,
    /// `true` when the artifact already existed and was reused.
    pub reused: bool,
}

#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ArtifactStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: &Path) -> Result<Self> {
        for kind in ArtifactKind::ALL {
            let dir = root.join(kind.dir_name());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, kind: ArtifactKind) -> PathBuf {
        self.root.join(kind.dir_name())
    }

    /// Key derived from a label and the serialised producing configuration.
    pub fn key<T: Serialize>(label: &str, inputs: &T) -> String {
        let json = serde_json::to_string(inputs).expect("artifact inputs serialise to JSON");
        let digest = sha256_hex(format!("{label}\n{json}").as_bytes());
        format!("{label}-{}", &digest[..24])
    }

    pub fn path(&self, kind: ArtifactKind, key: &str, ext: &str) -> PathBuf {
        self.dir(kind).join(format!("{key}.{ext}"))
    }

    /// Reads a file and checks it against its sidecar. `Ok(None)` if the file is absent.
    pub fn read_verified(&self, path: &Path) -> Result<Option<(String, String)>> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path, e)),
        };
        let sidecar = sidecar_path(path);
        let expected = fs::read_to_string(&sidecar).map_err(|_| Error::Resume {
            path: path.to_path_buf(),
            message: "content hash sidecar is missing".to_string(),
        })?;
        let actual = sha256_hex(text.as_bytes());
        if expected.trim() != actual {
            return Err(Error::Resume {
                path: path.to_path_buf(),
                message: format!("content hash {actual} does not match recorded {}", expected.trim()),
            });
        }
        Ok(Some((text, actual)))
    }

    /// Writes `text` and its sidecar via rename-into-place; returns the content hash.
    ///
    /// The sidecar lands first, so a crash can leave a sidecar without data
    /// (treated as absent) but never data without a sidecar from this writer.
    pub fn write_atomic(&self, path: &Path, text: &str) -> Result<String> {
        let hash = sha256_hex(text.as_bytes());
        write_file_atomic(&sidecar_path(path), &format!("{hash}\n"))?;
        write_file_atomic(path, text)?;
        Ok(hash)
    }

    /// Returns the stored artifact if present and intact, otherwise builds,
    /// encodes and stores it. Decoding failures of an intact file are errors.
    pub fn fetch_or_build<T>(
        &self,
        path: PathBuf,
        build: impl FnOnce() -> Result<T>,
        encode: impl FnOnce(&T) -> String,
        decode: impl FnOnce(&str, &Path) -> Result<T>,
    ) -> Result<Stored<T>> {
        if let Some((text, hash)) = self.read_verified(&path)? {
            let value = decode(&text, &path)?;
            log::debug!("reusing {}", path.display());
            return Ok(Stored {
                value,
                hash,
                path,
                reused: true,
            });
        }
        let value = build()?;
        let hash = self.write_atomic(&path, &encode(&value))?;
        log::debug!("wrote {}", path.display());
        Ok(Stored {
            value,
            hash,
            path,
            reused: false,
        })
    }

    /// Stores text that is regenerated on every run. An existing copy must be
    /// intact and identical; a differing copy means the inputs changed under
    /// the same key.
    pub fn put_text(&self, path: PathBuf, text: &str) -> Result<String> {
        if let Some((existing, hash)) = self.read_verified(&path)? {
            if existing != text {
                return Err(Error::Resume {
                    path,
                    message: "stored artifact differs from the regenerated one".to_string(),
                });
            }
            return Ok(hash);
        }
        self.write_atomic(&path, text)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".sha256");
    path.with_file_name(name)
}

/// Writes through a uniquely named temporary file in the same directory, then renames.
pub fn write_file_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(
        ".{name}.tmp-{}-{}",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
