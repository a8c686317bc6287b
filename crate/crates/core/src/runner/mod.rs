//! Everything that executes model code: the worker wire protocol, bundle
//! materialization, declarative fixture handlers and the sandboxed launcher.

pub mod bundle;
pub mod fixture;
pub mod launcher;
pub mod protocol;
pub mod sandbox;
pub mod worker;

pub use bundle::{BundleCache, BundleError, BundleKind, BundleManifest, FileEntry, Materialized, MANIFEST_FILE};
pub use fixture::{interpret_fixture, FixtureError, FixtureHandlerSpec, FixtureOutput, FixtureSet, FIXTURE_FILE};
pub use launcher::{Launcher, LauncherConfig, WorkerCommand};
pub use protocol::{InvokeRequest, InvokeResponse, InvokeStatus, Limits, StateBlob};
pub use sandbox::{enter_sandbox, SandboxPolicy, SandboxReport};
pub use worker::{run_if_requested, Isolation, WorkerSpec, WORKER_ARG};
