//! Step-by-step execution of published models: run sessions with re-runs,
//! stateless direct invocation, and the runner image registry.

mod engine;
mod error;
mod runners;
mod state;

pub use engine::{Orchestrator, OrchestratorConfig, RunSession, StepResult, VersionSelector};
pub use error::OrchestratorError;
pub use runners::{image_id_for, DirectoryImageBuilder, ImageBuilder, ImageStatus, RunnerImage, RunnerRegistry};
pub use state::{StateProvenance, StateStore};
