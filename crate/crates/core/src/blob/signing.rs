use std::fmt;

use hmac::{KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::digest::BlobDigest;

type HmacSha256 = hmac::Hmac<Sha256>;

/// A capability to PUT exactly one blob into a staging scope until `exp`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedUploadUrl {
    pub scope: String,
    pub digest: BlobDigest,
    /// Expiry, unix seconds.
    pub exp: i64,
    /// Lowercase hex HMAC-SHA256 over `"{scope}\n{digest}\n{exp}"`.
    pub sig: String,
}

impl SignedUploadUrl {
    pub fn path(&self) -> String {
        format!("/blobs/staging/{}/{}", self.scope, self.digest)
    }

    /// Parses an absolute or path-only URL produced by [`Self::url`].
    pub fn parse(url: &str) -> Option<Self> {
        let start = url.find("/blobs/staging/")?;
        let (path, query) = url[start..].split_once('?')?;
        let mut parts = path.trim_start_matches("/blobs/staging/").splitn(2, '/');
        let scope = parts.next()?.to_string();
        let digest = parts.next()?.parse().ok()?;
        let (mut exp, mut sig) = (None, None);
        for pair in query.split('&') {
            match pair.split_once('=') {
                Some(("exp", v)) => exp = v.parse().ok(),
                Some(("sig", v)) => sig = Some(v.to_string()),
                _ => {}
            }
        }
        Some(SignedUploadUrl {
            scope,
            digest,
            exp: exp?,
            sig: sig?,
        })
    }

    pub fn url(&self, base: &str) -> String {
        format!(
            "{}{}?exp={}&sig={}",
            base.trim_end_matches('/'),
            self.path(),
            self.exp,
            self.sig
        )
    }
}

impl fmt::Display for SignedUploadUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.url(""))
    }
}

/// HMAC key holder for upload URLs.
#[derive(Clone)]
pub struct UrlSigner {
    key: Vec<u8>,
}

impl fmt::Debug for UrlSigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("UrlSigner { .. }")
    }
}

impl UrlSigner {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        UrlSigner { key: key.into() }
    }

    fn mac(&self, scope: &str, digest: &str, exp: i64) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("HMAC accepts any key length");
        mac.update(format!("{scope}\n{digest}\n{exp}").as_bytes());
        mac
    }

    pub fn sign(&self, scope: &str, digest: &BlobDigest, exp: i64) -> SignedUploadUrl {
        let sig = hex::encode(self.mac(scope, digest.as_str(), exp).finalize().into_bytes());
        SignedUploadUrl {
            scope: scope.to_string(),
            digest: digest.clone(),
            exp,
            sig,
        }
    }

    /// Constant-time signature check; expiry is the caller's concern.
    pub fn verify(&self, url: &SignedUploadUrl) -> bool {
        let Ok(sig) = hex::decode(&url.sig) else {
            return false;
        };
        self.mac(&url.scope, url.digest.as_str(), url.exp)
            .verify_slice(&sig)
            .is_ok()
    }
}
