use serde_json::Value;
use thiserror::Error;

use crate::metadata::ValidationErrors;
use crate::registry::RegistryError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("model `{0}` not found")]
    NotFound(String),
    #[error("model `{0}` has no finalized version {1}")]
    VersionNotFinalized(String, u64),
    #[error("model `{0}` has no live version")]
    NoLiveVersion(String),
    #[error("model has no step {0}")]
    NoSuchStep(usize),
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("payloads are invalid ({} violation(s))", .0.len())]
    ValidationFailed(ValidationErrors),
    #[error("{0}")]
    StepOutOfOrder(String),
    #[error("session is busy with another step")]
    SessionBusy,
    #[error("state token does not belong to this model, version and step")]
    StateTokenMismatch,
    #[error("handler failed: {message}")]
    RunnerFailure {
        message: String,
        /// Full sanitized log text; omitted when logs are not exposed.
        detail: Option<String>,
    },
    #[error("step exceeded its {0} ms time limit")]
    Timeout(u64),
    #[error("runner image build failed: {0}")]
    BuildFailed(String),
    #[error(transparent)]
    Registry(RegistryError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<RegistryError> for OrchestratorError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::NotFound(slug) => OrchestratorError::NotFound(slug),
            RegistryError::NoSuchVersion(slug, v) => OrchestratorError::VersionNotFinalized(slug, v),
            other => OrchestratorError::Registry(other),
        }
    }
}

impl OrchestratorError {
    pub fn code(&self) -> &'static str {
        match self {
            OrchestratorError::NotFound(_) => "NotFound",
            OrchestratorError::VersionNotFinalized(..) => "VersionNotFinalized",
            OrchestratorError::NoLiveVersion(_) => "NoLiveVersion",
            OrchestratorError::NoSuchStep(_) => "NoSuchStep",
            OrchestratorError::SessionNotFound(_) => "SessionNotFound",
            OrchestratorError::ValidationFailed(_) => "ValidationFailed",
            OrchestratorError::StepOutOfOrder(_) => "StepOutOfOrder",
            OrchestratorError::SessionBusy => "SessionBusy",
            OrchestratorError::StateTokenMismatch => "StateTokenMismatch",
            OrchestratorError::RunnerFailure { .. } => "RunnerFailure",
            OrchestratorError::Timeout(_) => "Timeout",
            OrchestratorError::BuildFailed(_) => "BuildFailed",
            OrchestratorError::Registry(e) => e.code(),
            OrchestratorError::Internal(_) => "InternalError",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            OrchestratorError::NotFound(_)
            | OrchestratorError::VersionNotFinalized(..)
            | OrchestratorError::NoLiveVersion(_)
            | OrchestratorError::NoSuchStep(_)
            | OrchestratorError::SessionNotFound(_) => 404,
            OrchestratorError::ValidationFailed(_) | OrchestratorError::StateTokenMismatch => 422,
            OrchestratorError::StepOutOfOrder(_) | OrchestratorError::SessionBusy => 409,
            OrchestratorError::RunnerFailure { .. } => 502,
            OrchestratorError::Timeout(_) => 504,
            OrchestratorError::BuildFailed(_) | OrchestratorError::Internal(_) => 500,
            OrchestratorError::Registry(e) => e.http_status(),
        }
    }

    pub fn details(&self) -> Vec<Value> {
        match self {
            OrchestratorError::ValidationFailed(errors) => errors
                .iter()
                .map(|v| serde_json::to_value(v).expect("violation serializes"))
                .collect(),
            OrchestratorError::RunnerFailure { detail: Some(d), .. } => vec![serde_json::json!({ "logs": d })],
            OrchestratorError::Registry(e) => e.details(),
            _ => Vec::new(),
        }
    }
}
