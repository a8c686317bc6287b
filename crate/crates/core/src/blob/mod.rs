//! Content-addressed artifact storage with a token-scoped staging area, an
//! immutable published area, and HMAC-signed expiring upload URLs.

mod signing;
mod store;

pub use crate::digest::{BlobDigest, InvalidDigest};
pub use signing::{SignedUploadUrl, UrlSigner};
pub use store::{BlobError, BlobStore};
