//! API documentation generated from metadata: for every step, what a direct
//! invocation must send (the previous step's payloads) and what it returns.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::catalog::ComponentKind;
use super::document::{ComponentSpec, Dependency, ModelMetadata};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiDescription {
    pub model_name: String,
    pub summary: ApiSummary,
    pub steps: Vec<StepEndpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSummary {
    pub step_count: usize,
    pub input_components: usize,
    pub output_components: usize,
    pub dependencies: Vec<Dependency>,
    /// Route template for direct step invocation.
    pub invoke_route: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEndpoint {
    pub index: usize,
    pub name: String,
    pub request: RequestDoc,
    pub response: ResponseDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestDoc {
    /// Step whose components produce this request's payloads.
    pub from_step: Option<String>,
    /// Whether the previous step may have emitted a state token to pass on.
    pub accepts_state_token: bool,
    pub payloads: Vec<PayloadDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadDoc {
    pub component: ComponentKind,
    pub title: String,
    /// Descriptive schema including cardinality bounds.
    pub schema: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDoc {
    pub final_step: bool,
    pub components: Vec<ComponentSpec>,
}

pub const INVOKE_ROUTE: &str = "POST /api/v1/models/{slug}/versions/{version}/steps/{index}:invoke";

pub fn generate_api_doc(m: &ModelMetadata) -> ApiDescription {
    let steps = m
        .steps
        .iter()
        .enumerate()
        .map(|(k, step)| {
            let previous = k.checked_sub(1).map(|p| &m.steps[p]);
            let payloads = previous
                .map(|p| {
                    p.input_components()
                        .map(|c| PayloadDoc {
                            component: c.kind(),
                            title: c.props.title().to_string(),
                            schema: c.payload_schema().describe(),
                        })
                        .collect()
                })
                .unwrap_or_default();
            StepEndpoint {
                index: k,
                name: step.name.clone(),
                request: RequestDoc {
                    from_step: previous.map(|p| p.name.clone()),
                    accepts_state_token: previous.is_some(),
                    payloads,
                },
                response: ResponseDoc {
                    final_step: m.is_final(k),
                    components: step.inputs.clone(),
                },
            }
        })
        .collect();

    let all = || m.steps.iter().flat_map(|s| s.inputs.iter());
    ApiDescription {
        model_name: m.model_name.clone(),
        summary: ApiSummary {
            step_count: m.steps.len(),
            input_components: all().filter(|c| c.kind().is_input()).count(),
            output_components: all().filter(|c| !c.kind().is_input()).count(),
            dependencies: m.dependencies.clone(),
            invoke_route: INVOKE_ROUTE.to_string(),
        },
        steps,
    }
}
