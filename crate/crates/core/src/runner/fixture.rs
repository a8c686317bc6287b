//! Declarative handlers for fixture bundles.
//!
//! A fixture bundle ships a `fixture.json` mapping handler names to
//! [`FixtureHandlerSpec`]s. The worker interprets them inside the sandbox;
//! tests call [`interpret_fixture`] directly as an oracle.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical;
use crate::metadata::{ComponentKind, ComponentSpec, Props};

pub const FIXTURE_FILE: &str = "fixture.json";

/// File name a probe handler leaves behind in its working directory.
pub const PROBE_MARKER: &str = "probe-marker";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FixtureHandlerSpec {
    /// Renders fixed components, optionally emitting fixed state text.
    Static {
        components: Vec<ComponentSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state: Option<String>,
    },
    /// Repacks each payload into the matching read-only view.
    Echo {
        #[serde(default)]
        title: String,
    },
    /// Uploaded files (or images) to an image-selection component, with
    /// candidate items looked up by file name; `*` matches any name.
    MapItems {
        output: ComponentSpec,
        table: BTreeMap<String, Vec<String>>,
        #[serde(default)]
        emit_state: bool,
    },
    /// Formats `template` once per selected item. `{item}` and `{name}`
    /// (the image name) are substituted.
    Template { output: ComponentSpec, template: String },
    /// Sleeps, then renders `components`.
    Sleep {
        millis: u64,
        #[serde(default)]
        components: Vec<ComponentSpec>,
    },
    /// Raises a handler error.
    Fail { message: String },
    /// Aborts the process executing it.
    Crash,
    /// Tries operations a sandboxed handler must not be able to perform and
    /// reports each outcome as a line of a `Text.View`.
    Probe {
        #[serde(default)]
        connect: Vec<String>,
        #[serde(default)]
        write: Vec<String>,
        #[serde(default)]
        read: Vec<String>,
        #[serde(default)]
        env: Vec<String>,
    },
}

/// The contents of `fixture.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSet {
    pub handlers: BTreeMap<String, FixtureHandlerSpec>,
}

impl FixtureSet {
    pub fn parse(bytes: &[u8]) -> Result<Self, FixtureError> {
        serde_json::from_slice(bytes).map_err(|e| FixtureError::Invalid(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self).expect("fixture set serializes")
    }

    pub fn get(&self, name: &str) -> Result<&FixtureHandlerSpec, FixtureError> {
        self.handlers
            .get(name)
            .ok_or_else(|| FixtureError::UnknownHandler(name.to_string()))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FixtureError {
    #[error("invalid fixture definition: {0}")]
    Invalid(String),
    #[error("no fixture handler named `{0}`")]
    UnknownHandler(String),
    #[error("payload {index} has no shape this handler understands")]
    UnsupportedPayload { index: usize },
    #[error("{0}")]
    Raised(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOutput {
    pub components: Vec<ComponentSpec>,
    pub state: Option<Vec<u8>>,
    /// Lines the handler would print to its log stream.
    pub log: Vec<String>,
}

impl FixtureOutput {
    fn new(components: Vec<ComponentSpec>) -> Self {
        FixtureOutput {
            components,
            state: None,
            log: Vec::new(),
        }
    }

    /// Canonical JSON of the rendered components, for byte comparisons.
    pub fn canonical_components(&self) -> Vec<u8> {
        canonical::to_vec(&self.components).expect("components serialize")
    }
}

/// Runs a declarative handler. Deterministic and total on valid payloads
/// for every kind except the diagnostic ones (`sleep`, `fail`, `crash`,
/// `probe`), which exist to exercise the sandbox.
pub fn interpret_fixture(
    handler: &FixtureHandlerSpec,
    payloads: &[Value],
    state: Option<&[u8]>,
) -> Result<FixtureOutput, FixtureError> {
    let mut out = match handler {
        FixtureHandlerSpec::Static { components, state } => FixtureOutput {
            components: components.clone(),
            state: state.as_ref().map(|s| s.as_bytes().to_vec()),
            log: Vec::new(),
        },
        FixtureHandlerSpec::Echo { title } => {
            let components = payloads
                .iter()
                .enumerate()
                .map(|(i, p)| echo_one(i, p, title))
                .collect::<Result<Vec<_>, _>>()?;
            FixtureOutput::new(components)
        }
        FixtureHandlerSpec::MapItems {
            output,
            table,
            emit_state,
        } => map_items(output, table, *emit_state, payloads)?,
        FixtureHandlerSpec::Template { output, template } => {
            template_outputs(output, template, payloads)?
        }
        FixtureHandlerSpec::Sleep { millis, components } => {
            std::thread::sleep(Duration::from_millis(*millis));
            FixtureOutput::new(components.clone())
        }
        FixtureHandlerSpec::Fail { message } => return Err(FixtureError::Raised(message.clone())),
        FixtureHandlerSpec::Crash => std::process::abort(),
        FixtureHandlerSpec::Probe {
            connect,
            write,
            read,
            env,
        } => probe(connect, write, read, env),
    };
    out.log.insert(
        0,
        format!(
            "handler received {} payload(s), state: {}",
            payloads.len(),
            state.map_or("none".to_string(), |s| format!("{} byte(s)", s.len()))
        ),
    );
    Ok(out)
}

fn with_data(props: Props, data: Value) -> ComponentSpec {
    ComponentSpec {
        props,
        embedded_data: Some(data),
    }
}

fn titled(kind: ComponentKind, title: &str) -> Props {
    let mut props = Props::default_for(kind);
    match &mut props {
        Props::FileDownload { title: t }
        | Props::TextView { title: t }
        | Props::ImageView { title: t }
        | Props::DocumentView { title: t } => *t = title.to_string(),
        _ => {}
    }
    props
}

fn selected_items(list: Option<&Value>) -> Vec<String> {
    list.and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter(|a| a.get("selected") == Some(&Value::Bool(true)))
        .filter_map(|a| a.get("item").and_then(Value::as_str).map(str::to_string))
        .collect()
}

fn echo_one(index: usize, payload: &Value, title: &str) -> Result<ComponentSpec, FixtureError> {
    let unsupported = || FixtureError::UnsupportedPayload { index };
    if let Some(texts) = payload.get("texts") {
        return Ok(with_data(titled(ComponentKind::TextView, title), json!({"texts": texts})));
    }
    if let Some(files) = payload.get("files") {
        return Ok(with_data(titled(ComponentKind::FileDownload, title), json!({"files": files})));
    }
    if let Some(images) = payload.get("images").and_then(Value::as_array) {
        let images: Vec<Value> = images
            .iter()
            .map(|img| {
                let text = img.get("text").cloned().unwrap_or_else(|| {
                    let sel = selected_items(img.get("attributes"));
                    if sel.is_empty() {
                        Value::Null
                    } else {
                        Value::String(sel.join(", "))
                    }
                });
                json!({"name": img["name"], "data": img["data"], "text": text})
            })
            .collect();
        return Ok(with_data(titled(ComponentKind::ImageView, title), json!({"images": images})));
    }
    if let Some(docs) = payload.get("documents") {
        return Ok(with_data(titled(ComponentKind::DocumentView, title), json!({"documents": docs})));
    }
    if payload.get("items").is_some() {
        let texts = selected_items(payload.get("items"));
        return Ok(with_data(titled(ComponentKind::TextView, title), json!({"texts": texts})));
    }
    Err(unsupported())
}

fn map_items(
    output: &ComponentSpec,
    table: &BTreeMap<String, Vec<String>>,
    emit_state: bool,
    payloads: &[Value],
) -> Result<FixtureOutput, FixtureError> {
    let mut images = Vec::new();
    let mut detections = BTreeMap::new();
    for (i, p) in payloads.iter().enumerate() {
        let files = p
            .get("files")
            .or_else(|| p.get("images"))
            .and_then(Value::as_array)
            .ok_or(FixtureError::UnsupportedPayload { index: i })?;
        for f in files {
            let name = f.get("name").and_then(Value::as_str).unwrap_or_default();
            let items = table
                .get(name)
                .or_else(|| table.get("*"))
                .cloned()
                .unwrap_or_default();
            detections.insert(name.to_string(), items.clone());
            images.push(json!({"name": name, "data": f.get("data").cloned().unwrap_or_default(), "items": items}));
        }
    }
    let mut out = FixtureOutput::new(vec![with_data(output.props.clone(), json!({"images": images}))]);
    out.log.push(format!("mapped items for {} image(s)", detections.len()));
    if emit_state {
        out.state = Some(canonical::to_vec(&json!({"detections": detections})).expect("json"));
    }
    Ok(out)
}

fn fill(template: &str, item: &str, name: &str) -> String {
    template.replace("{item}", item).replace("{name}", name)
}

fn template_outputs(
    output: &ComponentSpec,
    template: &str,
    payloads: &[Value],
) -> Result<FixtureOutput, FixtureError> {
    let mut images = Vec::new();
    let mut texts = Vec::new();
    for (i, p) in payloads.iter().enumerate() {
        if let Some(list) = p.get("images").and_then(Value::as_array) {
            for img in list {
                let name = img.get("name").and_then(Value::as_str).unwrap_or_default();
                let lines: Vec<String> = selected_items(img.get("attributes"))
                    .iter()
                    .map(|item| fill(template, item, name))
                    .collect();
                let text = if lines.is_empty() {
                    Value::Null
                } else {
                    Value::String(lines.join("\n"))
                };
                images.push(json!({"name": name, "data": img.get("data").cloned().unwrap_or_default(), "text": text}));
            }
        } else if p.get("items").is_some() {
            texts.extend(selected_items(p.get("items")).iter().map(|item| fill(template, item, "")));
        } else {
            return Err(FixtureError::UnsupportedPayload { index: i });
        }
    }
    let data = match output.kind() {
        ComponentKind::TextView => json!({"texts": texts}),
        _ => json!({"images": images}),
    };
    Ok(FixtureOutput::new(vec![with_data(output.props.clone(), data)]))
}

fn outcome<T, E: std::fmt::Display>(r: Result<T, E>) -> String {
    match r {
        Ok(_) => "allowed".to_string(),
        Err(e) => format!("denied ({e})"),
    }
}

fn probe(connect: &[String], write: &[String], read: &[String], env: &[String]) -> FixtureOutput {
    let mut lines = Vec::new();
    for addr in connect {
        let r = addr
            .to_socket_addrs()
            .map_err(|e| e.to_string())
            .and_then(|mut a| a.next().ok_or_else(|| "no address".to_string()))
            .and_then(|a| {
                TcpStream::connect_timeout(&a, Duration::from_secs(2)).map_err(|e| e.to_string())
            });
        lines.push(format!("connect {addr}: {}", outcome(r)));
    }
    for path in write {
        let r = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| f.write_all(b"probe\n"));
        lines.push(format!("write {path}: {}", outcome(r)));
    }
    for path in read {
        lines.push(format!("read {path}: {}", outcome(fs::read(path))));
    }
    for name in env {
        let state = if std::env::var_os(name).is_some() { "present" } else { "absent" };
        lines.push(format!("env {name}: {state}"));
    }
    let marker = Path::new(PROBE_MARKER);
    let ambient = if marker.exists() { "found" } else { "none" };
    lines.push(format!("ambient {PROBE_MARKER}: {ambient}"));
    let _ = fs::write(marker, b"left by a previous invocation");
    FixtureOutput::new(vec![with_data(
        titled(ComponentKind::TextView, "probe"),
        json!({"texts": lines}),
    )])
}
