#![allow(dead_code)]

pub mod rest;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use modelport::blob::{BlobStore, UrlSigner};
use modelport::clock::{Clock, ManualClock};
use modelport::registry::{Registry, RegistryConfig};
use tempfile::TempDir;

pub const KEY_ALICE: &str = "alice-key-0001";
pub const KEY_BOB: &str = "bob-key-0002";
pub const SECRET: &[u8] = b"test-signing-secret";

pub struct Env {
    pub dir: TempDir,
    pub clock: Arc<ManualClock>,
    pub blobs: Arc<BlobStore>,
    pub registry: Arc<Registry>,
}

pub fn api_keys() -> HashMap<String, String> {
    HashMap::from([
        (KEY_ALICE.to_string(), "alice".to_string()),
        (KEY_BOB.to_string(), "bob".to_string()),
    ])
}

impl Env {
    pub fn new() -> Env {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::at_unix(1_700_000_000));
        Env::open(dir, clock)
    }

    pub fn open(dir: TempDir, clock: Arc<ManualClock>) -> Env {
        let dyn_clock: Arc<dyn Clock> = clock.clone();
        let blobs = Arc::new(
            BlobStore::open(dir.path().join("blobs"), UrlSigner::new(SECRET.to_vec()), dyn_clock.clone()).unwrap(),
        );
        let registry = Arc::new(
            Registry::open(
                dir.path().join("registry.log"),
                blobs.clone(),
                dyn_clock,
                api_keys(),
                RegistryConfig::default(),
            )
            .unwrap(),
        );
        Env {
            dir,
            clock,
            blobs,
            registry,
        }
    }

    /// Drops the in-memory state and reopens from disk.
    pub fn reopen(self) -> Env {
        let Env { dir, clock, .. } = self;
        Env::open(dir, clock)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

use modelport::metadata::{parse_metadata, ComponentSpec, ModelMetadata};
use modelport::runner::{interpret_fixture, WorkerCommand};
use modelport::samples;
use modelport::service::{Service, ServiceConfig};
use serde_json::Value;

pub fn worker() -> WorkerCommand {
    WorkerCommand::binary(env!("CARGO_BIN_EXE_modelportd"))
}

/// A full service over a temporary data directory with a manual clock.
pub struct Svc {
    pub dir: TempDir,
    pub clock: Arc<ManualClock>,
    pub service: Arc<Service>,
}

pub fn svc() -> Svc {
    svc_with(|_| {})
}

pub fn svc_with(tweak: impl FnOnce(&mut ServiceConfig)) -> Svc {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::at_unix(1_700_000_000));
    let mut config = ServiceConfig::new(dir.path().join("data"), SECRET.to_vec(), worker());
    config.api_keys = api_keys();
    config.clock = clock.clone();
    tweak(&mut config);
    let service = Arc::new(Service::open(config).unwrap());
    Svc { dir, clock, service }
}

pub fn metadata(doc: Value) -> ModelMetadata {
    parse_metadata(doc.to_string().as_bytes()).unwrap()
}

pub const PARK: &[u8] = b"\x89PNG park";
pub const KITCHEN: &[u8] = b"\xff\xd8 kitchen";

pub fn vqg_images() -> Value {
    samples::upload_payload(&[("park.jpg", PARK), ("kitchen.jpg", KITCHEN)])
}

/// Picks the first two candidate items of every image.
pub fn first_two(_: &str, items: &[String]) -> Vec<String> {
    items.iter().take(2).cloned().collect()
}

/// The VQG walkthrough computed by interpreting the fixture handlers
/// directly, with no service, worker or storage involved. Returns the
/// components rendered by each handler.
pub fn vqg_oracle(upload: &Value, choose: fn(&str, &[String]) -> Vec<String>) -> Vec<Vec<ComponentSpec>> {
    let handlers = samples::vqg_handlers();
    let h0 = interpret_fixture(&handlers[0].1, &[], None).unwrap();
    let h1 = interpret_fixture(&handlers[1].1, &[upload.clone()], None).unwrap();
    let selection = samples::selection_payload(&h1.components[0], choose);
    let h2 = interpret_fixture(&handlers[2].1, &[selection], h1.state.as_deref()).unwrap();
    vec![h0.components, h1.components, h2.components]
}

pub fn canonical<T: serde::Serialize>(v: &T) -> Vec<u8> {
    modelport::canonical::to_vec(v).unwrap()
}
