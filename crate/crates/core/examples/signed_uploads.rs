// Content-addressed storage: signed upload URLs, digest checks, expiry
// and atomic promotion into the published area.

use std::sync::Arc;

use modelport::blob::{BlobDigest, BlobStore, UrlSigner};
use modelport::clock::ManualClock;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let clock = Arc::new(ManualClock::at_unix(1_700_000_000));
    let store = BlobStore::open(dir.path(), UrlSigner::new(b"example-secret".to_vec()), clock.clone())?;

    store.register_scope("publish-1", 1_700_003_600)?;
    let weights = b"model weights".to_vec();
    let digest = BlobDigest::of(&weights);
    let url = store.issue_upload_url("publish-1", &digest, chrono::Duration::minutes(15))?;
    println!("PUT {}", url.url("http://127.0.0.1:8080"));

    match store.receive_upload(&url, b"something else") {
        Err(e) => println!("wrong bytes: {e}"),
        Ok(_) => unreachable!("mismatched content is never stored"),
    }
    store.receive_upload(&url, &weights)?;
    println!("staged {digest}");

    store.promote_to_published("publish-1", &[digest.clone()])?;
    assert_eq!(store.read_published(&digest)?, weights);
    println!("published {digest}");

    store.register_scope("publish-2", 1_700_003_600)?;
    let late = store.issue_upload_url("publish-2", &digest, chrono::Duration::minutes(15))?;
    clock.advance(chrono::Duration::minutes(20));
    println!("after expiry: {}", store.receive_upload(&late, &weights).unwrap_err());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
