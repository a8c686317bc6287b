//! Component catalog, model metadata documents, payload schemas and
//! validation, and API documentation generation. Everything here is pure.

mod apidoc;
mod catalog;
mod document;
mod error;
mod payload;
mod props;
mod schema;

pub use apidoc::{
    generate_api_doc, ApiDescription, ApiSummary, PayloadDoc, RequestDoc, ResponseDoc,
    StepEndpoint, INVOKE_ROUTE,
};
pub use catalog::{ComponentKind, Direction, UnknownComponent};
pub use document::{
    canonical_dependencies, dependency_hash, parse_metadata, ComponentSpec, Dependency,
    ModelMetadata, StepSpec,
};
pub use error::{ErrorCode, ValidationErrors, Violation};
pub use payload::{validate_payload, validate_step_payloads};
pub use props::Props;
pub use schema::{derive_payload_schema, embedded_schema, LeafType, PayloadSchema, SchemaNode};
