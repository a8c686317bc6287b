//! Wires storage, registry and orchestrator together over one data
//! directory.
//!
//! ```text
//! <data-dir>/
//!   blobs/         staging and published artifacts
//!   registry.log   model and version records
//!   bundles/       materialized bundles, one per version
//!   runners/       runner images, one per dependency hash
//!   state/         handler state referenced by state tokens
//!   jail/          per-invocation working directories
//! ```

use std::collections::HashMap;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use crate::blob::{BlobStore, UrlSigner};
use crate::clock::{Clock, SystemClock};
use crate::orchestrator::{
    DirectoryImageBuilder, ImageBuilder, Orchestrator, OrchestratorConfig, RunnerRegistry, StateStore,
};
use crate::registry::{Registry, RegistryConfig, RegistryError};
use crate::runner::{BundleCache, Isolation, Launcher, LauncherConfig, WorkerCommand};

pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub signing_secret: Vec<u8>,
    /// API key to owner name.
    pub api_keys: HashMap<String, String>,
    pub public_url: String,
    pub step_timeout: Duration,
    pub worker: WorkerCommand,
    pub isolation: Isolation,
    pub sdk_command: Option<Vec<String>>,
    pub image_builder: Box<dyn ImageBuilder>,
    pub clock: Arc<dyn Clock>,
    pub pool_size: usize,
    pub expose_logs: bool,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, signing_secret: impl Into<Vec<u8>>, worker: WorkerCommand) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            signing_secret: signing_secret.into(),
            api_keys: HashMap::new(),
            public_url: "http://127.0.0.1:8080".into(),
            step_timeout: Duration::from_secs(60),
            worker,
            isolation: Isolation::Enforced,
            sdk_command: None,
            image_builder: Box::new(DirectoryImageBuilder::default()),
            clock: Arc::new(SystemClock),
            pool_size: 8,
            expose_logs: true,
        }
    }

    pub fn with_api_key(mut self, owner: &str, key: &str) -> Self {
        self.api_keys.insert(key.to_string(), owner.to_string());
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot prepare {what}: {source}")]
    Io { what: &'static str, source: io::Error },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

fn io_ctx(what: &'static str) -> impl FnOnce(io::Error) -> ServiceError {
    move |source| ServiceError::Io { what, source }
}

/// The whole service, ready to be served over HTTP or used in-process.
pub struct Service {
    pub clock: Arc<dyn Clock>,
    pub blobs: Arc<BlobStore>,
    pub registry: Arc<Registry>,
    pub orchestrator: Arc<Orchestrator>,
}

impl Service {
    pub fn open(config: ServiceConfig) -> Result<Service, ServiceError> {
        let root = config.data_dir.clone();
        std::fs::create_dir_all(&root).map_err(io_ctx("data directory"))?;
        let root = root.canonicalize().map_err(io_ctx("data directory"))?;
        let clock = config.clock.clone();
        let blobs = Arc::new(
            BlobStore::open(root.join("blobs"), UrlSigner::new(config.signing_secret.clone()), clock.clone())
                .map_err(io_ctx("blob store"))?,
        );
        let registry = Arc::new(Registry::open(
            root.join("registry.log"),
            blobs.clone(),
            clock.clone(),
            config.api_keys,
            RegistryConfig {
                public_url: config.public_url,
                ..RegistryConfig::default()
            },
        )?);
        let bundles = BundleCache::open(root.join("bundles"), blobs.clone()).map_err(io_ctx("bundle cache"))?;
        let runners = RunnerRegistry::open(root.join("runners"), config.image_builder, clock.clone())
            .map_err(io_ctx("runner registry"))?;
        let mut launcher_config = LauncherConfig::new(config.worker, root.join("jail"));
        launcher_config.isolation = config.isolation;
        launcher_config.sdk_command = config.sdk_command;
        let launcher = Launcher::new(launcher_config).map_err(io_ctx("worker jail"))?;
        let states = StateStore::open(root.join("state"), state_key(&config.signing_secret))
            .map_err(io_ctx("state store"))?;
        let mut redact = vec![root.display().to_string()];
        if let Ok(secret) = String::from_utf8(config.signing_secret) {
            if secret.len() >= 4 {
                redact.push(secret);
            }
        }
        let orchestrator = Arc::new(Orchestrator::new(
            registry.clone(),
            bundles,
            runners,
            launcher,
            states,
            clock.clone(),
            OrchestratorConfig {
                step_timeout: config.step_timeout,
                pool_size: config.pool_size,
                expose_logs: config.expose_logs,
                redact,
                ..OrchestratorConfig::default()
            },
        ));
        Ok(Service {
            clock,
            blobs,
            registry,
            orchestrator,
        })
    }
}

/// Separate key for state tokens so they can never double as upload URLs.
fn state_key(secret: &[u8]) -> Vec<u8> {
    use sha2::Digest;
    let mut h = sha2::Sha256::new();
    h.update(b"state-tokens\n");
    h.update(secret);
    h.finalize().to_vec()
}
