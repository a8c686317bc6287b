//! Handler-private state carried between steps.
//!
//! A state token names the producing `(model, version, step)` and the
//! content digest of the bytes, and is MAC'd with the service secret. Equal
//! state from the same producer yields the same token, so repeated identical
//! invocations return identical results, while tokens remain unforgeable.

use std::fs;
use std::io;
use std::path::PathBuf;

use hmac::{KeyInit, Mac};
use sha2::Sha256;

use crate::digest::BlobDigest;

type HmacSha256 = hmac::Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateProvenance {
    pub model: String,
    pub version_id: u64,
    pub step: usize,
}

pub struct StateStore {
    dir: PathBuf,
    key: Vec<u8>,
}

impl std::fmt::Debug for StateStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateStore").field("dir", &self.dir).finish()
    }
}

impl StateStore {
    pub fn open(dir: impl Into<PathBuf>, key: impl Into<Vec<u8>>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(StateStore { dir, key: key.into() })
    }

    fn mac(&self, body: &str) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("HMAC accepts any key length");
        mac.update(b"state-token\n");
        mac.update(body.as_bytes());
        mac
    }

    /// Stores `bytes` and returns the token for them.
    pub fn put(&self, origin: &StateProvenance, bytes: &[u8]) -> io::Result<String> {
        let digest = BlobDigest::of(bytes);
        let path = self.dir.join(digest.hex());
        if !path.is_file() {
            let tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
            fs::write(tmp.path(), bytes)?;
            tmp.persist(&path).map_err(|e| e.error)?;
        }
        let body = format!("{}:{}:{}:{}", origin.model, origin.version_id, origin.step, digest.hex());
        let sig = hex::encode(self.mac(&body).finalize().into_bytes());
        Ok(format!("{body}:{sig}"))
    }

    /// Verifies a token and returns its producer and the state bytes.
    /// Any malformed, forged or dangling token yields `None`.
    pub fn get(&self, token: &str) -> Option<(StateProvenance, Vec<u8>)> {
        let (body, sig) = token.rsplit_once(':')?;
        self.mac(body).verify_slice(&hex::decode(sig).ok()?).ok()?;
        let mut parts = body.split(':');
        let model = parts.next()?.to_string();
        let version_id = parts.next()?.parse().ok()?;
        let step = parts.next()?.parse().ok()?;
        let digest: BlobDigest = format!("sha256:{}", parts.next()?).parse().ok()?;
        if parts.next().is_some() {
            return None;
        }
        let bytes = fs::read(self.dir.join(digest.hex())).ok()?;
        if !digest.matches(&bytes) {
            return None;
        }
        Some((StateProvenance { model, version_id, step }, bytes))
    }
}
