//! Publish machine-learning models as multi-step, component-described
//! programs and run them step by step through sandboxed workers.
//!
//! The crate is organised around the life of a model:
//!
//! - [`metadata`]: the component catalog, metadata documents, payload
//!   validation and generated API docs.
//! - [`blob`]: content-addressed staging/published storage with signed,
//!   expiring upload URLs.
//! - [`registry`]: the publish handshake, automatic versioning and live
//!   version promotion.
//! - [`runner`]: the worker wire protocol, bundle materialization, the
//!   fixture interpreter and the process sandbox.
//! - [`orchestrator`]: run sessions, re-runs, direct invocation and the
//!   runner image registry.
//! - [`service`]: wiring of all of the above over one data directory.
//! - [`server`]: the REST surface over a [`service::Service`].
//! - [`samples`]: a demo model built from fixture handlers.

pub mod blob;
pub mod canonical;
pub mod clock;
pub mod digest;
pub mod metadata;
pub mod orchestrator;
pub mod registry;
pub mod runner;
pub mod samples;
pub mod server;
pub mod service;

pub use digest::BlobDigest;
