use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::digest::BlobDigest;
use crate::metadata::ApiDescription;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    #[default]
    Public,
    /// Reachable by slug, never listed.
    Unlisted,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub digest: BlobDigest,
    pub size: u64,
}

/// A finalized version. Never modified after creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionRecord {
    pub version_id: u64,
    pub label: String,
    pub metadata_digest: BlobDigest,
    pub artifacts: Vec<ArtifactEntry>,
    pub created_at: DateTime<Utc>,
    pub dependency_hash: BlobDigest,
}

impl VersionRecord {
    pub fn artifact_map(&self) -> std::collections::BTreeMap<String, BlobDigest> {
        self.artifacts
            .iter()
            .map(|a| (a.path.clone(), a.digest.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub slug: String,
    pub owner: String,
    pub visibility: Visibility,
    pub versions: Vec<VersionRecord>,
    pub live: Option<u64>,
}

impl ModelRecord {
    pub fn version(&self, id: u64) -> Option<&VersionRecord> {
        self.versions.iter().find(|v| v.version_id == id)
    }

    pub fn live_version(&self) -> Option<&VersionRecord> {
        self.live.and_then(|id| self.version(id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenState {
    Open,
    ManifestReceived,
    Finalized,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeginResponse {
    pub token: String,
    pub version_id: u64,
    pub expires_at: DateTime<Utc>,
}

/// One entry of a publish manifest as sent by the client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub digest: BlobDigest,
    pub size: u64,
}

/// Where to upload one manifest file, or a note that it is already stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UploadTicket {
    Upload {
        path: String,
        url: String,
        exp: i64,
        sig: String,
    },
    AlreadyPresent {
        path: String,
        already_present: bool,
    },
}

impl UploadTicket {
    pub fn path(&self) -> &str {
        match self {
            UploadTicket::Upload { path, .. } | UploadTicket::AlreadyPresent { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestResponse {
    pub uploads: Vec<UploadTicket>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub slug: String,
    pub model_name: String,
    pub owner: String,
    pub live: Option<u64>,
    pub live_label: Option<String>,
    pub version_count: usize,
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDetail {
    pub record: ModelRecord,
    /// Metadata document of the live version.
    pub metadata: Option<Value>,
    pub api: Option<ApiDescription>,
}
