//! A ready-made three-step visual question generation model backed by
//! fixture handlers: upload images, pick detected objects, read generated
//! questions. Used by the examples and handy for smoke-testing a deployment.

use std::collections::BTreeMap;

use base64::Engine as _;
use serde_json::{json, Value};

use crate::metadata::{parse_metadata, ComponentSpec, ModelMetadata};
use crate::registry::PublishPackage;
use crate::runner::FixtureHandlerSpec;

pub const VQG_QUESTION_TEMPLATE: &str = "What is the {item} doing?";

pub fn vqg_metadata_json() -> Value {
    json!({
        "model_name": "Visual question generation",
        "steps": [
            {
                "name": "upload_images",
                "inputs": [{
                    "component": "File.Upload",
                    "props": {"max_files": 5, "min_files": 1, "title": "Upload images", "types": [".jpg", ".png"]}
                }]
            },
            {
                "name": "select_objects",
                "inputs": [{
                    "component": "Image.WithSelectMulti",
                    "props": {"title": "Select objects", "max_selected": 2}
                }]
            },
            {
                "name": "generate_questions",
                "inputs": [{
                    "component": "Image.View",
                    "props": {"title": "Generated questions"}
                }]
            }
        ],
        "dependencies": [
            {"name": "torch", "version": "2.1.0"},
            {"name": "transformers", "version": "4.35.0"}
        ]
    })
}

pub fn vqg_metadata() -> ModelMetadata {
    parse_metadata(vqg_metadata_json().to_string().as_bytes()).expect("sample metadata is valid")
}

/// Stub detector output by file name; `*` covers every other image.
pub fn vqg_detector_table() -> BTreeMap<String, Vec<String>> {
    BTreeMap::from([
        ("park.jpg".to_string(), vec!["dog".to_string(), "frisbee".to_string(), "person".to_string()]),
        ("*".to_string(), vec!["cat".to_string(), "dog".to_string()]),
    ])
}

pub fn vqg_handlers() -> Vec<(String, FixtureHandlerSpec)> {
    let meta = vqg_metadata();
    let component = |step: usize| meta.steps[step].inputs[0].clone();
    vec![
        (
            "upload_images".to_string(),
            FixtureHandlerSpec::Static {
                components: vec![component(0)],
                state: None,
            },
        ),
        (
            "detect_objects".to_string(),
            FixtureHandlerSpec::MapItems {
                output: component(1),
                table: vqg_detector_table(),
                emit_state: true,
            },
        ),
        (
            "generate_questions".to_string(),
            FixtureHandlerSpec::Template {
                output: component(2),
                template: VQG_QUESTION_TEMPLATE.to_string(),
            },
        ),
    ]
}

pub fn vqg_package() -> PublishPackage {
    PublishPackage::fixture(&vqg_metadata(), vqg_handlers())
}

/// A single-step model whose handler does nothing but render one text
/// view; useful for measuring dispatch overhead.
pub fn noop_package() -> PublishPackage {
    let meta = parse_metadata(
        json!({
            "model_name": "noop",
            "steps": [{"name": "show", "inputs": [{"component": "Text.View", "props": {"title": "nothing"}}]}]
        })
        .to_string()
        .as_bytes(),
    )
    .expect("noop metadata is valid");
    let view = meta.steps[0].inputs[0].clone();
    PublishPackage::fixture(
        &meta,
        vec![(
            "noop".to_string(),
            FixtureHandlerSpec::Static {
                components: vec![view],
                state: None,
            },
        )],
    )
}

/// Step-0 payload for a `File.Upload` component.
pub fn upload_payload(files: &[(&str, &[u8])]) -> Value {
    let b64 = base64::engine::general_purpose::STANDARD;
    json!({
        "files": files
            .iter()
            .map(|(name, bytes)| json!({"name": name, "data": b64.encode(bytes)}))
            .collect::<Vec<_>>()
    })
}

/// Builds an `Image.WithSelectMulti` payload from a rendered component,
/// selecting the items `choose` returns for each image.
pub fn selection_payload(rendered: &ComponentSpec, mut choose: impl FnMut(&str, &[String]) -> Vec<String>) -> Value {
    let empty = json!({"images": []});
    let images = rendered.embedded_data.as_ref().unwrap_or(&empty)["images"]
        .as_array()
        .cloned()
        .unwrap_or_default();
    let images: Vec<Value> = images
        .iter()
        .map(|img| {
            let name = img["name"].as_str().unwrap_or_default();
            let items: Vec<String> = img["items"]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(|i| i.as_str().map(str::to_string))
                .collect();
            let picked = choose(name, &items);
            json!({
                "name": name,
                "data": img["data"],
                "attributes": items
                    .iter()
                    .map(|i| json!({"item": i, "selected": picked.contains(i)}))
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    json!({ "images": images })
}
