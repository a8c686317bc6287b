//! Model and version records, the publish handshake, automatic versioning
//! and live-version promotion, persisted as an append-only event log.

mod error;
mod log;
mod package;
mod records;
mod service;

pub use error::RegistryError;
pub use log::{EventLog, LogEvent};
pub use package::PublishPackage;
pub use records::{
    ArtifactEntry, BeginResponse, ManifestFile, ManifestResponse, ModelDetail, ModelRecord, ModelSummary, TokenState,
    UploadTicket, VersionRecord, Visibility,
};
pub use service::{load_api_keys, valid_slug, Registry, RegistryConfig};
