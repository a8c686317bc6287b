//! The model metadata document: ordered steps of component specs plus the
//! dependency list.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

use super::catalog::ComponentKind;
use super::error::{field, index, ErrorCode, ValidationErrors, Violation};
use super::props::Props;
use super::schema::{derive_payload_schema, embedded_schema, PayloadSchema};
use crate::canonical;
use crate::digest::BlobDigest;

/// One component in a step: validated props and, for rendered components,
/// the data the handler embedded for display.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSpec {
    pub props: Props,
    pub embedded_data: Option<Value>,
}

impl ComponentSpec {
    pub fn new(props: Props) -> Self {
        ComponentSpec {
            props,
            embedded_data: None,
        }
    }

    pub fn with_data(props: Props, data: Value) -> Result<Self, ValidationErrors> {
        let mut errors = Vec::new();
        check_embedded(&props, Some(&data), "embedded_data", &mut errors);
        ValidationErrors(errors).into_result()?;
        Ok(ComponentSpec {
            props,
            embedded_data: Some(data),
        })
    }

    pub fn kind(&self) -> ComponentKind {
        self.props.kind()
    }

    pub fn payload_schema(&self) -> PayloadSchema {
        derive_payload_schema(&self.props)
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("component".into(), json!(self.kind().name()));
        obj.insert("props".into(), self.props.to_json());
        obj.insert("schema".into(), self.payload_schema().to_wire());
        if let Some(data) = &self.embedded_data {
            obj.insert("embedded_data".into(), data.clone());
        }
        Value::Object(obj)
    }

    pub fn from_json(value: &Value) -> Result<Self, ValidationErrors> {
        let mut errors = Vec::new();
        let spec = parse_component(value, "", &mut errors);
        ValidationErrors(errors).into_result()?;
        Ok(spec.expect("component parsed without errors"))
    }
}

impl Serialize for ComponentSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ComponentSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        ComponentSpec::from_json(&value).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepSpec {
    pub name: String,
    /// Components in render order. Despite the wire key `inputs`, output
    /// components live here too.
    pub inputs: Vec<ComponentSpec>,
}

impl StepSpec {
    pub fn input_components(&self) -> impl Iterator<Item = &ComponentSpec> {
        self.inputs.iter().filter(|c| c.kind().is_input())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Dependency {
    pub name: String,
    pub version: String,
}

impl Dependency {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        Dependency {
            name: name.into(),
            version: version.into(),
        }
    }
}

/// Sorted and deduplicated copy of a dependency list.
pub fn canonical_dependencies(deps: &[Dependency]) -> Vec<Dependency> {
    let mut out = deps.to_vec();
    out.sort();
    out.dedup();
    out
}

/// Digest of the canonicalized dependency list; keys runner images.
pub fn dependency_hash(deps: &[Dependency]) -> BlobDigest {
    let bytes = canonical::to_vec(&canonical_dependencies(deps)).expect("dependencies serialize");
    BlobDigest::of(&bytes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelMetadata {
    pub model_name: String,
    pub steps: Vec<StepSpec>,
    pub dependencies: Vec<Dependency>,
}

impl ModelMetadata {
    pub fn step_index(&self, name: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.name == name)
    }

    pub fn is_final(&self, step: usize) -> bool {
        step + 1 == self.steps.len()
    }

    pub fn dependency_hash(&self) -> BlobDigest {
        dependency_hash(&self.dependencies)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "model_name": self.model_name,
            "steps": self.steps.iter().map(|s| json!({
                "name": s.name,
                "inputs": s.inputs.iter().map(ComponentSpec::to_json).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "dependencies": self.dependencies,
        })
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::value_to_string(&self.to_json()).into_bytes()
    }

    pub fn from_json(value: &Value) -> Result<Self, ValidationErrors> {
        parse_document(value)
    }
}

impl Serialize for ModelMetadata {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelMetadata {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        parse_document(&value).map_err(serde::de::Error::custom)
    }
}

/// Parses and validates a serialized metadata document, reporting every
/// violation with its location.
pub fn parse_metadata(raw: &[u8]) -> Result<ModelMetadata, ValidationErrors> {
    let value: Value = serde_json::from_slice(raw).map_err(|e| {
        ValidationErrors(vec![Violation::new(
            ErrorCode::MalformedDocument,
            "",
            format!("not valid JSON: {e}"),
        )])
    })?;
    parse_document(&value)
}

fn parse_document(value: &Value) -> Result<ModelMetadata, ValidationErrors> {
    let mut errors = Vec::new();
    let Some(obj) = value.as_object() else {
        return Err(ValidationErrors(vec![Violation::new(
            ErrorCode::MalformedDocument,
            "",
            "metadata must be a JSON object",
        )]));
    };

    for key in obj.keys() {
        if !matches!(key.as_str(), "model_name" | "steps" | "dependencies") {
            errors.push(Violation::new(
                ErrorCode::UnknownField,
                key.clone(),
                format!("unexpected field `{key}`"),
            ));
        }
    }

    let model_name = match obj.get("model_name") {
        None => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            errors.push(Violation::new(
                ErrorCode::TypeMismatch,
                "model_name",
                "expected a string",
            ));
            String::new()
        }
    };

    let steps = match obj.get("steps") {
        None => {
            errors.push(Violation::new(
                ErrorCode::MalformedDocument,
                "steps",
                "missing `steps` array",
            ));
            Vec::new()
        }
        Some(Value::Array(raw_steps)) => {
            if raw_steps.is_empty() {
                errors.push(Violation::new(
                    ErrorCode::EmptyModel,
                    "steps",
                    "a model needs at least one step",
                ));
            }
            parse_steps(raw_steps, &mut errors)
        }
        Some(_) => {
            errors.push(Violation::new(
                ErrorCode::MalformedDocument,
                "steps",
                "`steps` must be an array",
            ));
            Vec::new()
        }
    };

    let dependencies = parse_dependencies(obj.get("dependencies"), &mut errors);

    ValidationErrors(errors).into_result()?;
    Ok(ModelMetadata {
        model_name,
        steps,
        dependencies,
    })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn parse_steps(raw_steps: &[Value], errors: &mut Vec<Violation>) -> Vec<StepSpec> {
    let mut steps = Vec::with_capacity(raw_steps.len());
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw) in raw_steps.iter().enumerate() {
        let path = index("steps", i);
        let Some(obj) = raw.as_object() else {
            errors.push(Violation::new(
                ErrorCode::MalformedDocument,
                path,
                "step must be an object",
            ));
            continue;
        };
        for key in obj.keys() {
            if key != "name" && key != "inputs" {
                errors.push(Violation::new(
                    ErrorCode::UnknownField,
                    field(&path, key),
                    format!("unexpected field `{key}`"),
                ));
            }
        }
        let name = match obj.get("name").and_then(Value::as_str) {
            Some(n) if is_identifier(n) => n.to_string(),
            Some(n) => {
                errors.push(Violation::new(
                    ErrorCode::MalformedDocument,
                    field(&path, "name"),
                    format!("step name `{n}` is not an identifier"),
                ));
                n.to_string()
            }
            None => {
                errors.push(Violation::new(
                    ErrorCode::MissingField,
                    field(&path, "name"),
                    "step needs a string `name`",
                ));
                String::new()
            }
        };
        if !name.is_empty() {
            if let Some(first) = seen.get(&name) {
                errors.push(Violation::new(
                    ErrorCode::DuplicateStepName,
                    field(&path, "name"),
                    format!("step name `{name}` already used by steps[{first}]"),
                ));
            } else {
                seen.insert(name.clone(), i);
            }
        }

        let inputs_path = field(&path, "inputs");
        let mut inputs = Vec::new();
        match obj.get("inputs") {
            Some(Value::Array(raw_inputs)) => {
                if raw_inputs.is_empty() {
                    errors.push(Violation::new(
                        ErrorCode::MalformedDocument,
                        inputs_path.clone(),
                        "a step needs at least one component",
                    ));
                }
                for (j, c) in raw_inputs.iter().enumerate() {
                    if let Some(spec) = parse_component(c, &index(&inputs_path, j), errors) {
                        inputs.push(spec);
                    }
                }
            }
            _ => errors.push(Violation::new(
                ErrorCode::MalformedDocument,
                inputs_path.clone(),
                "step needs an `inputs` array",
            )),
        }

        let is_final = i + 1 == raw_steps.len();
        if is_final && !inputs.is_empty() {
            if !inputs.iter().any(|c| !c.kind().is_input()) {
                errors.push(Violation::new(
                    ErrorCode::InvalidFinalStep,
                    inputs_path.clone(),
                    "the final step must contain an output component",
                ));
            }
            for (j, c) in inputs.iter().enumerate() {
                if c.kind().is_input() {
                    errors.push(Violation::new(
                        ErrorCode::InvalidFinalStep,
                        field(&index(&inputs_path, j), "component"),
                        format!("{} is an input component; the final step only displays results", c.kind()),
                    ));
                }
            }
        }
        steps.push(StepSpec { name, inputs });
    }
    steps
}

fn parse_component(raw: &Value, path: &str, errors: &mut Vec<Violation>) -> Option<ComponentSpec> {
    let Some(obj) = raw.as_object() else {
        errors.push(Violation::new(
            ErrorCode::MalformedDocument,
            path,
            "component must be an object",
        ));
        return None;
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "component" | "props" | "schema" | "embedded_data") {
            errors.push(Violation::new(
                ErrorCode::UnknownField,
                field(path, key),
                format!("unexpected field `{key}`"),
            ));
        }
    }
    let kind_path = field(path, "component");
    let kind = match obj.get("component") {
        Some(Value::String(name)) => match name.parse::<ComponentKind>() {
            Ok(kind) => kind,
            Err(e) => {
                errors.push(Violation::new(ErrorCode::UnknownComponent, kind_path, e.to_string()));
                return None;
            }
        },
        Some(_) => {
            errors.push(Violation::new(
                ErrorCode::TypeMismatch,
                kind_path,
                "component name must be a string",
            ));
            return None;
        }
        None => {
            errors.push(Violation::new(
                ErrorCode::MissingField,
                kind_path,
                "missing `component`",
            ));
            return None;
        }
    };

    let props_path = field(path, "props");
    let empty = Map::new();
    let raw_props = match obj.get("props") {
        None => &empty,
        Some(Value::Object(p)) => p,
        Some(_) => {
            errors.push(Violation::new(
                ErrorCode::TypeMismatch,
                props_path.clone(),
                "props must be an object",
            ));
            &empty
        }
    };
    let props = Props::parse(kind, raw_props, &props_path, errors);

    if let Some(declared) = obj.get("schema") {
        let derived = derive_payload_schema(&props).to_wire();
        if *declared != derived {
            errors.push(Violation::new(
                ErrorCode::SchemaMismatch,
                field(path, "schema"),
                format!(
                    "declared schema does not match the one derived from props: expected {}",
                    canonical::value_to_string(&derived)
                ),
            ));
        }
    }

    let embedded_data = obj.get("embedded_data").cloned();
    check_embedded(&props, embedded_data.as_ref(), &field(path, "embedded_data"), errors);

    Some(ComponentSpec {
        props,
        embedded_data,
    })
}

fn check_embedded(props: &Props, data: Option<&Value>, path: &str, errors: &mut Vec<Violation>) {
    let Some(data) = data else { return };
    let schema = embedded_schema(props);
    if schema.is_empty() {
        errors.push(Violation::new(
            ErrorCode::UnknownField,
            path,
            format!("{} does not take embedded data", props.kind()),
        ));
    } else {
        schema.validate(data, path, errors);
    }
}

fn parse_dependencies(raw: Option<&Value>, errors: &mut Vec<Violation>) -> Vec<Dependency> {
    let items = match raw {
        None => return Vec::new(),
        Some(Value::Array(items)) => items,
        Some(_) => {
            errors.push(Violation::new(
                ErrorCode::MalformedDocument,
                "dependencies",
                "`dependencies` must be an array",
            ));
            return Vec::new();
        }
    };
    let mut deps = Vec::new();
    let mut by_name: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        let path = index("dependencies", i);
        let name = item.get("name").and_then(Value::as_str);
        let version = item.get("version").and_then(Value::as_str);
        let extra = item
            .as_object()
            .map(|o| o.keys().any(|k| k != "name" && k != "version"))
            .unwrap_or(true);
        match (name, version) {
            (Some(n), Some(v))
                if !extra && valid_token(n) && valid_token(v) =>
            {
                match by_name.get(n) {
                    Some((first, other)) if other != v => errors.push(Violation::new(
                        ErrorCode::MalformedDocument,
                        path,
                        format!(
                            "`{n}` pinned to both {other} (dependencies[{first}]) and {v}"
                        ),
                    )),
                    _ => {
                        by_name.insert(n.to_string(), (i, v.to_string()));
                        deps.push(Dependency::new(n, v));
                    }
                }
            }
            _ => errors.push(Violation::new(
                ErrorCode::MalformedDocument,
                path,
                "dependency must be {\"name\", \"version\"} with non-empty, whitespace-free values",
            )),
        }
    }
    canonical_dependencies(&deps)
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(steps: Value) -> Vec<u8> {
        serde_json::to_vec(&json!({"steps": steps})).unwrap()
    }

    fn view() -> Value {
        json!({"component": "Text.View"})
    }

    #[test]
    fn empty_steps_is_empty_model() {
        let err = parse_metadata(&doc(json!([]))).unwrap_err();
        assert_eq!(err.0[0].code, ErrorCode::EmptyModel);
    }

    #[test]
    fn unknown_component_is_located() {
        let err = parse_metadata(&doc(json!([
            {"name": "a", "inputs": [{"component": "Video.Upload", "props": {}}]},
            {"name": "b", "inputs": [view()]}
        ])))
        .unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err.0[0].code, ErrorCode::UnknownComponent);
        assert_eq!(err.0[0].path, "steps[0].inputs[0].component");
    }

    #[test]
    fn duplicate_step_names_rejected() {
        let err = parse_metadata(&doc(json!([
            {"name": "a", "inputs": [{"component": "Text.In"}]},
            {"name": "a", "inputs": [view()]}
        ])))
        .unwrap_err();
        assert_eq!(err.0[0].code, ErrorCode::DuplicateStepName);
        assert_eq!(err.0[0].path, "steps[1].name");
    }

    #[test]
    fn final_step_must_only_display() {
        let err = parse_metadata(&doc(json!([
            {"name": "a", "inputs": [{"component": "Text.In"}]}
        ])))
        .unwrap_err();
        assert!(err.has(ErrorCode::InvalidFinalStep));
    }

    #[test]
    fn malformed_json() {
        let err = parse_metadata(b"{\"steps\": [").unwrap_err();
        assert_eq!(err.0[0].code, ErrorCode::MalformedDocument);
    }

    #[test]
    fn defaults_are_emitted_explicitly() {
        let m = parse_metadata(&doc(json!([{"name": "only", "inputs": [view()]}]))).unwrap();
        let v = m.to_json();
        assert_eq!(v["steps"][0]["inputs"][0]["props"], json!({"title": ""}));
        assert_eq!(v["dependencies"], json!([]));
        assert_eq!(v["model_name"], json!(""));
    }

    #[test]
    fn dependencies_are_canonicalized() {
        let raw = serde_json::to_vec(&json!({
            "steps": [{"name": "s", "inputs": [view()]}],
            "dependencies": [
                {"name": "torch", "version": "2.1"},
                {"name": "numpy", "version": "1.26"},
                {"name": "torch", "version": "2.1"}
            ]
        }))
        .unwrap();
        let m = parse_metadata(&raw).unwrap();
        assert_eq!(
            m.dependencies,
            vec![Dependency::new("numpy", "1.26"), Dependency::new("torch", "2.1")]
        );
    }

    #[test]
    fn conflicting_pins_rejected() {
        let raw = serde_json::to_vec(&json!({
            "steps": [{"name": "s", "inputs": [view()]}],
            "dependencies": [{"name": "torch", "version": "2.1"}, {"name": "torch", "version": "2.2"}]
        }))
        .unwrap();
        let err = parse_metadata(&raw).unwrap_err();
        assert_eq!(err.0[0].path, "dependencies[1]");
    }

    #[test]
    fn dependency_hash_ignores_order_and_duplicates() {
        let a = [Dependency::new("b", "1"), Dependency::new("a", "2")];
        let b = [Dependency::new("a", "2"), Dependency::new("b", "1"), Dependency::new("a", "2")];
        assert_eq!(dependency_hash(&a), dependency_hash(&b));
        let c = [Dependency::new("a", "2"), Dependency::new("b", "1.0")];
        assert_ne!(dependency_hash(&a), dependency_hash(&c));
    }

    #[test]
    fn embedded_data_is_checked() {
        let spec = ComponentSpec::with_data(
            Props::default_for(ComponentKind::TextView),
            json!({"texts": ["hello"]}),
        )
        .unwrap();
        assert_eq!(ComponentSpec::from_json(&spec.to_json()).unwrap(), spec);
        assert!(ComponentSpec::with_data(
            Props::default_for(ComponentKind::TextView),
            json!({"texts": [1]})
        )
        .is_err());
        assert!(ComponentSpec::with_data(
            Props::default_for(ComponentKind::FileUpload),
            json!({})
        )
        .is_err());
    }
}
