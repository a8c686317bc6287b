//! The published bundle layout and its local materialization.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::os::unix::fs::PermissionsExt;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fixture::{FixtureSet, FIXTURE_FILE};
use crate::blob::{BlobError, BlobStore};
use crate::canonical;
use crate::digest::BlobDigest;
use crate::metadata::{canonical_dependencies, Dependency, ModelMetadata};

pub const MANIFEST_FILE: &str = "bundle.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BundleKind {
    SdkCode,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub digest: BlobDigest,
}

/// Contents of `bundle.json`. `handlers[k]` runs step `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub kind: BundleKind,
    pub handlers: Vec<String>,
    #[serde(default)]
    pub dependencies: Vec<Dependency>,
    #[serde(default)]
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bundle manifest is malformed: {0}")]
    Malformed(String),
    #[error("bundle does not match the model: {}", .0.join("; "))]
    Inconsistent(Vec<String>),
    #[error("bundle file `{path}` is corrupted: expected {expected}, got {actual}")]
    DigestMismatch {
        path: String,
        expected: BlobDigest,
        actual: BlobDigest,
    },
    #[error("bundle file `{path}` ({digest}) is not published")]
    NotFound { path: String, digest: BlobDigest },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// True for a non-empty relative path of plain components.
pub fn is_safe_path(path: &str) -> bool {
    let p = Path::new(path);
    !path.is_empty()
        && !path.contains('\\')
        && !path.ends_with('/')
        && p.components().all(|c| matches!(c, Component::Normal(_)))
}

impl BundleManifest {
    pub fn parse(bytes: &[u8]) -> Result<Self, BundleError> {
        let m: BundleManifest =
            serde_json::from_slice(bytes).map_err(|e| BundleError::Malformed(e.to_string()))?;
        for f in &m.files {
            if !is_safe_path(&f.path) || f.path == MANIFEST_FILE {
                return Err(BundleError::Malformed(format!("invalid file path `{}`", f.path)));
            }
        }
        let paths: BTreeSet<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        if paths.len() != m.files.len() {
            return Err(BundleError::Malformed("duplicate file path".into()));
        }
        Ok(m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self).expect("manifest serializes")
    }

    pub fn file_map(&self) -> BTreeMap<String, BlobDigest> {
        self.files
            .iter()
            .map(|f| (f.path.clone(), f.digest.clone()))
            .collect()
    }

    /// Cross-checks the manifest against the model metadata and the full
    /// artifact map uploaded with it (which includes `bundle.json`).
    pub fn check_consistency(
        &self,
        metadata: &ModelMetadata,
        artifacts: &BTreeMap<String, BlobDigest>,
    ) -> Result<(), BundleError> {
        let mut problems = Vec::new();
        if self.handlers.len() != metadata.steps.len() {
            problems.push(format!(
                "{} handler(s) for {} step(s)",
                self.handlers.len(),
                metadata.steps.len()
            ));
        }
        if canonical_dependencies(&self.dependencies) != metadata.dependencies {
            problems.push("dependency list differs from the metadata".into());
        }
        let mut uploaded = artifacts.clone();
        uploaded.remove(MANIFEST_FILE);
        let listed = self.file_map();
        for (path, digest) in &listed {
            match uploaded.get(path) {
                None => problems.push(format!("file `{path}` is not part of the upload")),
                Some(d) if d != digest => problems.push(format!("file `{path}` digest differs from the upload")),
                Some(_) => {}
            }
        }
        for path in uploaded.keys().filter(|p| !listed.contains_key(*p)) {
            problems.push(format!("uploaded file `{path}` is not listed in the manifest"));
        }
        if self.kind == BundleKind::Fixture && !listed.contains_key(FIXTURE_FILE) {
            problems.push(format!("fixture bundle without `{FIXTURE_FILE}`"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BundleError::Inconsistent(problems))
        }
    }

    /// Every handler named by the manifest must exist in the fixture set.
    pub fn check_fixture(&self, fixture_bytes: &[u8]) -> Result<FixtureSet, BundleError> {
        let set = FixtureSet::parse(fixture_bytes).map_err(|e| BundleError::Malformed(e.to_string()))?;
        let missing: Vec<String> = self
            .handlers
            .iter()
            .filter(|h| !set.handlers.contains_key(*h))
            .map(|h| format!("handler `{h}` is not defined in {FIXTURE_FILE}"))
            .collect();
        if missing.is_empty() {
            Ok(set)
        } else {
            Err(BundleError::Inconsistent(missing))
        }
    }
}

/// A materialized, verified, read-only bundle directory.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
    pub cache_hit: bool,
}

/// Local cache of materialized bundles, one directory per `(model, version)`.
/// Versions are immutable, so entries are never invalidated.
pub struct BundleCache {
    root: PathBuf,
    blobs: Arc<BlobStore>,
    slots: Mutex<HashMap<(String, u64), Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for BundleCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BundleCache").field("root", &self.root).finish()
    }
}

impl BundleCache {
    pub fn open(root: impl Into<PathBuf>, blobs: Arc<BlobStore>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            if entry.file_name().to_string_lossy().starts_with(".build-") {
                make_writable(&entry.path());
                let _ = fs::remove_dir_all(entry.path());
            }
        }
        Ok(BundleCache {
            root,
            blobs,
            slots: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir_for(&self, model: &str, version: u64) -> PathBuf {
        self.root.join(format!("{model}@{version}"))
    }

    /// Places every artifact at its path under a fresh directory, verifying
    /// each digest before the directory becomes visible.
    pub fn materialize(
        &self,
        model: &str,
        version: u64,
        artifacts: &BTreeMap<String, BlobDigest>,
    ) -> Result<Materialized, BundleError> {
        let slot = self
            .slots
            .lock()
            .entry((model.to_string(), version))
            .or_default()
            .clone();
        let _guard = slot.lock();
        let dir = self.dir_for(model, version);
        if dir.is_dir() {
            let manifest = BundleManifest::parse(&fs::read(dir.join(MANIFEST_FILE))?)?;
            return Ok(Materialized {
                dir,
                manifest,
                cache_hit: true,
            });
        }
        let manifest_digest = artifacts.get(MANIFEST_FILE).ok_or_else(|| {
            BundleError::Malformed(format!("no `{MANIFEST_FILE}` among the artifacts"))
        })?;
        let manifest = BundleManifest::parse(&self.fetch(MANIFEST_FILE, manifest_digest)?)?;

        let staging = tempfile::Builder::new().prefix(".build-").tempdir_in(&self.root)?;
        for (path, digest) in artifacts {
            if !is_safe_path(path) {
                return Err(BundleError::Malformed(format!("invalid file path `{path}`")));
            }
            let bytes = self.fetch(path, digest)?;
            let dest = staging.path().join(path);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&dest, bytes)?;
        }
        make_read_only(staging.path())?;
        let built = staging.keep();
        if let Err(e) = fs::rename(&built, &dir) {
            make_writable(&built);
            let _ = fs::remove_dir_all(&built);
            return Err(e.into());
        }
        Ok(Materialized {
            dir,
            manifest,
            cache_hit: false,
        })
    }

    fn fetch(&self, path: &str, digest: &BlobDigest) -> Result<Vec<u8>, BundleError> {
        self.blobs.read_published(digest).map_err(|e| match e {
            BlobError::Corrupted(d) => {
                let actual = fs::read(self.blobs.root().join("published").join(d.hex()))
                    .map(|b| BlobDigest::of(&b))
                    .unwrap_or_else(|_| BlobDigest::of(b""));
                BundleError::DigestMismatch {
                    path: path.to_string(),
                    expected: d,
                    actual,
                }
            }
            BlobError::DigestMismatch { expected, actual } => BundleError::DigestMismatch {
                path: path.to_string(),
                expected,
                actual,
            },
            BlobError::NotFound(d) => BundleError::NotFound {
                path: path.to_string(),
                digest: d,
            },
            BlobError::Io(e) => BundleError::Io(e),
            other => BundleError::Io(io::Error::other(other.to_string())),
        })
    }
}

fn make_read_only(dir: &Path) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            make_read_only(&path)?;
        } else {
            fs::set_permissions(&path, fs::Permissions::from_mode(0o444))?;
        }
    }
    fs::set_permissions(dir, fs::Permissions::from_mode(0o555))
}

fn make_writable(dir: &Path) {
    let _ = fs::set_permissions(dir, fs::Permissions::from_mode(0o755));
    if let Ok(entries) = fs::read_dir(dir) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                make_writable(&path);
            }
        }
    }
}
