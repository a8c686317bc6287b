use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::Duration;
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use super::signing::{SignedUploadUrl, UrlSigner};
use crate::clock::Clock;
use crate::digest::BlobDigest;

#[derive(Debug, Error)]
pub enum BlobError {
    #[error("unknown upload scope `{0}`")]
    UnknownScope(String),
    #[error("invalid scope name `{0}`")]
    InvalidScope(String),
    #[error("upload URL signature is invalid")]
    BadSignature,
    #[error("upload URL expired")]
    Expired,
    #[error("content digest {actual} does not match expected {expected}")]
    DigestMismatch {
        expected: BlobDigest,
        actual: BlobDigest,
    },
    #[error("missing artifact(s): {}", list(.0))]
    MissingArtifact(Vec<BlobDigest>),
    #[error("stored blob {0} no longer matches its digest")]
    Corrupted(BlobDigest),
    #[error("blob {0} not found")]
    NotFound(BlobDigest),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn list(digests: &[BlobDigest]) -> String {
    digests
        .iter()
        .map(BlobDigest::as_str)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Content-addressed storage laid out as
/// `<root>/{staging/<scope>/<hex>, published/<hex>, tmp/}`.
///
/// Published blobs are never modified or removed. Promotion of a set of
/// blobs is atomic with respect to readers of this store.
pub struct BlobStore {
    root: PathBuf,
    signer: UrlSigner,
    clock: Arc<dyn Clock>,
    /// Registered staging scopes and their expiry (unix seconds).
    scopes: Mutex<HashMap<String, i64>>,
    scope_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    publish_gate: RwLock<()>,
    reads: AtomicU64,
    tmp_seq: AtomicU64,
}

impl std::fmt::Debug for BlobStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlobStore").field("root", &self.root).finish()
    }
}

impl BlobStore {
    pub fn open(root: impl Into<PathBuf>, signer: UrlSigner, clock: Arc<dyn Clock>) -> io::Result<Self> {
        let root = root.into();
        for dir in ["staging", "published", "tmp"] {
            fs::create_dir_all(root.join(dir))?;
        }
        // Leftovers from an interrupted write are never referenced.
        for entry in fs::read_dir(root.join("tmp"))? {
            let _ = fs::remove_file(entry?.path());
        }
        Ok(BlobStore {
            root,
            signer,
            clock,
            scopes: Mutex::new(HashMap::new()),
            scope_locks: Mutex::new(HashMap::new()),
            publish_gate: RwLock::new(()),
            reads: AtomicU64::new(0),
            tmp_seq: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn staging_dir(&self, scope: &str) -> PathBuf {
        self.root.join("staging").join(scope)
    }

    fn staged_path(&self, scope: &str, digest: &BlobDigest) -> PathBuf {
        self.staging_dir(scope).join(digest.hex())
    }

    fn published_path(&self, digest: &BlobDigest) -> PathBuf {
        self.root.join("published").join(digest.hex())
    }

    /// Opens a staging scope that accepts uploads until `expires_at`.
    pub fn register_scope(&self, scope: &str, expires_at: i64) -> Result<(), BlobError> {
        if !valid_scope(scope) {
            return Err(BlobError::InvalidScope(scope.to_string()));
        }
        fs::create_dir_all(self.staging_dir(scope))?;
        self.scopes.lock().insert(scope.to_string(), expires_at);
        Ok(())
    }

    /// Drops a scope and everything staged under it.
    pub fn discard_scope(&self, scope: &str) -> Result<(), BlobError> {
        self.scopes.lock().remove(scope);
        self.scope_locks.lock().remove(scope);
        match fs::remove_dir_all(self.staging_dir(scope)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    pub fn has_scope(&self, scope: &str) -> bool {
        self.scopes.lock().contains_key(scope)
    }

    /// Removes staging scopes whose expiry has passed. Returns how many.
    pub fn collect_expired(&self) -> Result<usize, BlobError> {
        let now = self.clock.unix();
        let expired: Vec<String> = self
            .scopes
            .lock()
            .iter()
            .filter(|(_, exp)| **exp <= now)
            .map(|(s, _)| s.clone())
            .collect();
        for scope in &expired {
            self.discard_scope(scope)?;
        }
        Ok(expired.len())
    }

    pub fn issue_upload_url(
        &self,
        scope: &str,
        expected: &BlobDigest,
        ttl: Duration,
    ) -> Result<SignedUploadUrl, BlobError> {
        if !self.has_scope(scope) {
            return Err(BlobError::UnknownScope(scope.to_string()));
        }
        let exp = self.clock.unix() + ttl.num_seconds();
        Ok(self.signer.sign(scope, expected, exp))
    }

    /// Checks signature, then expiry, then that the scope is still open.
    pub fn verify_url(&self, url: &SignedUploadUrl) -> Result<(), BlobError> {
        if !self.signer.verify(url) {
            return Err(BlobError::BadSignature);
        }
        if self.clock.unix() >= url.exp {
            return Err(BlobError::Expired);
        }
        if !self.has_scope(&url.scope) {
            return Err(BlobError::UnknownScope(url.scope.clone()));
        }
        Ok(())
    }

    /// Accepts an upload through a signed URL. Content whose digest differs
    /// from the URL's is discarded without touching disk.
    pub fn receive_upload(&self, url: &SignedUploadUrl, content: &[u8]) -> Result<BlobDigest, BlobError> {
        self.verify_url(url)?;
        let actual = BlobDigest::of(content);
        if actual != url.digest {
            return Err(BlobError::DigestMismatch {
                expected: url.digest.clone(),
                actual,
            });
        }
        self.write_once(&self.staged_path(&url.scope, &actual), content)?;
        Ok(actual)
    }

    /// Service-side staging for blobs the service itself produces.
    pub fn stage(&self, scope: &str, content: &[u8]) -> Result<BlobDigest, BlobError> {
        if !self.has_scope(scope) {
            return Err(BlobError::UnknownScope(scope.to_string()));
        }
        let digest = BlobDigest::of(content);
        self.write_once(&self.staged_path(scope, &digest), content)?;
        Ok(digest)
    }

    pub fn is_staged(&self, scope: &str, digest: &BlobDigest) -> bool {
        self.staged_path(scope, digest).is_file()
    }

    pub fn is_published(&self, digest: &BlobDigest) -> bool {
        self.published_path(digest).is_file()
    }

    pub fn read_staged(&self, scope: &str, digest: &BlobDigest) -> Result<Vec<u8>, BlobError> {
        read_verified(&self.staged_path(scope, digest), digest)
    }

    /// Moves the listed blobs from the scope's staging area to the published
    /// area, all or nothing, then clears the scope. Digests that are already
    /// published are accepted as-is.
    pub fn promote_to_published(&self, scope: &str, digests: &[BlobDigest]) -> Result<(), BlobError> {
        let lock = self
            .scope_locks
            .lock()
            .entry(scope.to_string())
            .or_default()
            .clone();
        let _serialized = lock.lock();

        let missing: Vec<BlobDigest> = digests
            .iter()
            .filter(|d| !self.is_published(d) && !self.is_staged(scope, d))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(BlobError::MissingArtifact(missing));
        }

        // Verify everything before exposing anything.
        for d in digests {
            if !self.is_published(d) {
                read_verified(&self.staged_path(scope, d), d).map_err(|e| match e {
                    BlobError::NotFound(d) => BlobError::MissingArtifact(vec![d]),
                    other => other,
                })?;
            }
        }

        {
            let _exclusive = self.publish_gate.write();
            for d in digests {
                let dest = self.published_path(d);
                if dest.is_file() {
                    continue;
                }
                fs::rename(self.staged_path(scope, d), &dest)?;
            }
            sync_dir(&self.root.join("published"));
        }
        self.discard_scope(scope)
    }

    pub fn read_published(&self, digest: &BlobDigest) -> Result<Vec<u8>, BlobError> {
        let _shared = self.publish_gate.read();
        self.reads.fetch_add(1, Ordering::Relaxed);
        read_verified(&self.published_path(digest), digest)
    }

    /// Number of `read_published` calls so far.
    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn published_digests(&self) -> Result<Vec<BlobDigest>, BlobError> {
        let _shared = self.publish_gate.read();
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("published"))? {
            let name = entry?.file_name();
            if let Ok(d) = format!("sha256:{}", name.to_string_lossy()).parse() {
                out.push(d);
            }
        }
        out.sort();
        Ok(out)
    }

    fn write_once(&self, dest: &Path, content: &[u8]) -> Result<(), BlobError> {
        if dest.is_file() {
            return Ok(());
        }
        let tmp = self.root.join("tmp").join(format!(
            "{}-{}",
            std::process::id(),
            self.tmp_seq.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(content)?;
        f.sync_all()?;
        drop(f);
        if let Err(e) = fs::rename(&tmp, dest) {
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        Ok(())
    }
}

fn read_verified(path: &Path, digest: &BlobDigest) -> Result<Vec<u8>, BlobError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(BlobError::NotFound(digest.clone()))
        }
        Err(e) => return Err(e.into()),
    };
    if !digest.matches(&bytes) {
        return Err(BlobError::Corrupted(digest.clone()));
    }
    Ok(bytes)
}

fn sync_dir(dir: &Path) {
    if let Ok(f) = fs::File::open(dir) {
        let _ = f.sync_all();
    }
}

fn valid_scope(scope: &str) -> bool {
    !scope.is_empty()
        && scope.len() <= 64
        && scope
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}
