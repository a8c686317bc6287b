use serde_json::{json, Value};
use thiserror::Error;

use crate::blob::BlobError;
use crate::metadata::ValidationErrors;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("invalid API key")]
    AuthFailed,
    #[error("model `{0}` belongs to another owner")]
    SlugOwnedByOther(String),
    #[error("caller does not own model `{0}`")]
    NotOwner(String),
    #[error("`{0}` is not a valid model slug")]
    InvalidSlug(String),
    #[error("unknown publish token")]
    UnknownToken,
    #[error("publish token has expired")]
    TokenExpired,
    #[error("publish token was already used for this step")]
    TokenReplayed,
    #[error("no manifest was submitted for this publish token")]
    NoManifest,
    #[error("this publish was already finalized")]
    AlreadyFinalized,
    #[error("model metadata is invalid ({} violation(s))", .0.len())]
    MetadataInvalid(ValidationErrors),
    #[error("publish manifest is invalid: {}", .0.join("; "))]
    ManifestInvalid(Vec<String>),
    #[error("bundle is invalid: {0}")]
    BundleInvalid(String),
    #[error("missing artifact(s): {}", .0.join(", "))]
    MissingArtifact(Vec<String>),
    #[error("model `{0}` not found")]
    NotFound(String),
    #[error("model `{0}` has no version {1}")]
    NoSuchVersion(String, u64),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl From<BlobError> for RegistryError {
    fn from(e: BlobError) -> Self {
        RegistryError::Storage(e.to_string())
    }
}

impl From<std::io::Error> for RegistryError {
    fn from(e: std::io::Error) -> Self {
        RegistryError::Storage(e.to_string())
    }
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::AuthFailed => "AuthFailed",
            RegistryError::SlugOwnedByOther(_) => "SlugOwnedByOther",
            RegistryError::NotOwner(_) => "NotOwner",
            RegistryError::InvalidSlug(_) => "InvalidSlug",
            RegistryError::UnknownToken => "UnknownToken",
            RegistryError::TokenExpired => "TokenExpired",
            RegistryError::TokenReplayed => "TokenReplayed",
            RegistryError::NoManifest => "NoManifest",
            RegistryError::AlreadyFinalized => "AlreadyFinalized",
            RegistryError::MetadataInvalid(_) => "MetadataInvalid",
            RegistryError::ManifestInvalid(_) => "ManifestInvalid",
            RegistryError::BundleInvalid(_) => "BundleInvalid",
            RegistryError::MissingArtifact(_) => "MissingArtifact",
            RegistryError::NotFound(_) => "NotFound",
            RegistryError::NoSuchVersion(..) => "NoSuchVersion",
            RegistryError::Storage(_) => "StorageError",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            RegistryError::AuthFailed => 401,
            RegistryError::SlugOwnedByOther(_) | RegistryError::NotOwner(_) => 403,
            RegistryError::UnknownToken | RegistryError::NotFound(_) | RegistryError::NoSuchVersion(..) => 404,
            RegistryError::TokenExpired
            | RegistryError::TokenReplayed
            | RegistryError::NoManifest
            | RegistryError::AlreadyFinalized
            | RegistryError::MissingArtifact(_) => 409,
            RegistryError::InvalidSlug(_)
            | RegistryError::MetadataInvalid(_)
            | RegistryError::ManifestInvalid(_)
            | RegistryError::BundleInvalid(_) => 422,
            RegistryError::Storage(_) => 500,
        }
    }

    pub fn details(&self) -> Vec<Value> {
        match self {
            RegistryError::MetadataInvalid(errors) => errors
                .iter()
                .map(|v| serde_json::to_value(v).expect("violation serializes"))
                .collect(),
            RegistryError::MissingArtifact(paths) => paths.iter().map(|p| json!({ "path": p })).collect(),
            RegistryError::ManifestInvalid(problems) => problems.iter().map(|p| json!({ "message": p })).collect(),
            _ => Vec::new(),
        }
    }
}
