//! Payload schemas derived from `(kind, props)`.
//!
//! The wire form is the compact shape used in metadata documents
//! (`{"files": [{"data": "b64", "name": "string"}]}`); cardinality lives only
//! in the in-memory tree and in the descriptive form used by API docs.

use std::collections::BTreeMap;

use base64::Engine as _;
use serde_json::{json, Map, Value};

use super::error::{field, index, ErrorCode, Violation};
use super::props::Props;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafType {
    Text,
    Boolean,
    Integer,
    Base64Bytes,
    FilenameText,
}

impl LeafType {
    pub fn wire_name(self) -> &'static str {
        match self {
            LeafType::Text | LeafType::FilenameText => "string",
            LeafType::Boolean => "bool",
            LeafType::Integer => "int",
            LeafType::Base64Bytes => "b64",
        }
    }

    fn doc_name(self) -> &'static str {
        match self {
            LeafType::Text => "string",
            LeafType::FilenameText => "filename",
            LeafType::Boolean => "bool",
            LeafType::Integer => "int",
            LeafType::Base64Bytes => "b64",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemaNode {
    Leaf(LeafType),
    Object(BTreeMap<String, SchemaNode>),
    /// Repetition with `min..=max` elements; `max == 0` is unbounded.
    List {
        item: Box<SchemaNode>,
        min: u32,
        max: u32,
    },
    /// Field may be absent or null.
    Optional(Box<SchemaNode>),
}

impl SchemaNode {
    fn list(item: SchemaNode, min: u32, max: u32) -> Self {
        SchemaNode::List {
            item: Box::new(item),
            min,
            max,
        }
    }

    fn object<const N: usize>(fields: [(&str, SchemaNode); N]) -> Self {
        SchemaNode::Object(
            fields
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        )
    }

    pub fn to_wire(&self) -> Value {
        match self {
            SchemaNode::Leaf(t) => Value::String(t.wire_name().to_string()),
            SchemaNode::Object(fields) => Value::Object(
                fields
                    .iter()
                    .map(|(k, v)| (k.clone(), v.to_wire()))
                    .collect(),
            ),
            SchemaNode::List { item, .. } => Value::Array(vec![item.to_wire()]),
            SchemaNode::Optional(inner) => inner.to_wire(),
        }
    }

    pub fn describe(&self) -> Value {
        match self {
            SchemaNode::Leaf(t) => json!({"type": t.doc_name()}),
            SchemaNode::Object(fields) => json!({
                "type": "object",
                "fields": fields
                    .iter()
                    .map(|(k, v)| (k.clone(), v.describe()))
                    .collect::<Map<_, _>>(),
            }),
            SchemaNode::List { item, min, max } => json!({
                "type": "list",
                "min": min,
                "max": if *max == 0 { Value::Null } else { json!(max) },
                "items": item.describe(),
            }),
            SchemaNode::Optional(inner) => {
                let mut d = inner.describe();
                d["optional"] = Value::Bool(true);
                d
            }
        }
    }

    fn validate(&self, value: &Value, path: &str, errors: &mut Vec<Violation>) {
        match self {
            SchemaNode::Optional(inner) => {
                if !value.is_null() {
                    inner.validate(value, path, errors);
                }
            }
            SchemaNode::Leaf(t) => check_leaf(*t, value, path, errors),
            SchemaNode::Object(fields) => match value.as_object() {
                Some(obj) => validate_fields(fields, obj, path, errors),
                None => errors.push(Violation::new(
                    ErrorCode::TypeMismatch,
                    path,
                    "expected an object",
                )),
            },
            SchemaNode::List { item, min, max } => match value.as_array() {
                Some(items) => {
                    let n = items.len();
                    if n < *min as usize || (*max != 0 && n > *max as usize) {
                        let bound = if *max == 0 {
                            format!("at least {min}")
                        } else {
                            format!("between {min} and {max}")
                        };
                        errors.push(Violation::new(
                            ErrorCode::CardinalityViolation,
                            path,
                            format!("expected {bound} entries, got {n}"),
                        ));
                    }
                    for (i, v) in items.iter().enumerate() {
                        item.validate(v, &index(path, i), errors);
                    }
                }
                None => errors.push(Violation::new(
                    ErrorCode::TypeMismatch,
                    path,
                    "expected an array",
                )),
            },
        }
    }
}

fn check_leaf(t: LeafType, value: &Value, path: &str, errors: &mut Vec<Violation>) {
    let problem = match t {
        LeafType::Text if !value.is_string() => Some("expected a string"),
        LeafType::Boolean if !value.is_boolean() => Some("expected a boolean"),
        LeafType::Integer if !(value.is_i64() || value.is_u64()) => Some("expected an integer"),
        LeafType::Base64Bytes => match value.as_str() {
            None => Some("expected base64 text"),
            Some(s) if base64::engine::general_purpose::STANDARD.decode(s).is_err() => {
                Some("invalid base64 data")
            }
            _ => None,
        },
        LeafType::FilenameText => match value.as_str() {
            None => Some("expected a file name"),
            Some(s) if !is_plain_filename(s) => {
                Some("file name must be non-empty and contain no path separators")
            }
            _ => None,
        },
        _ => None,
    };
    if let Some(msg) = problem {
        errors.push(Violation::new(ErrorCode::TypeMismatch, path, msg));
    }
}

fn is_plain_filename(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && !s.contains(['/', '\\', '\0'])
}

fn validate_fields(
    fields: &BTreeMap<String, SchemaNode>,
    obj: &Map<String, Value>,
    path: &str,
    errors: &mut Vec<Violation>,
) {
    for (name, node) in fields {
        match obj.get(name) {
            Some(v) => node.validate(v, &field(path, name), errors),
            None if matches!(node, SchemaNode::Optional(_)) => {}
            None => errors.push(Violation::new(
                ErrorCode::MissingField,
                field(path, name),
                format!("missing field `{name}`"),
            )),
        }
    }
    for name in obj.keys() {
        if !fields.contains_key(name) {
            errors.push(Violation::new(
                ErrorCode::UnknownField,
                field(path, name),
                format!("unexpected field `{name}`"),
            ));
        }
    }
}

/// Top-level record of named fields. Empty for output components.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PayloadSchema {
    pub fields: BTreeMap<String, SchemaNode>,
}

impl PayloadSchema {
    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn to_wire(&self) -> Value {
        Value::Object(
            self.fields
                .iter()
                .map(|(k, v)| (k.clone(), v.to_wire()))
                .collect(),
        )
    }

    pub fn describe(&self) -> Value {
        SchemaNode::Object(self.fields.clone()).describe()
    }

    /// Structural validation only; prop-level rules live in `payload`.
    pub fn validate(&self, value: &Value, path: &str, errors: &mut Vec<Violation>) {
        match value.as_object() {
            Some(obj) => validate_fields(&self.fields, obj, path, errors),
            None => errors.push(Violation::new(
                ErrorCode::TypeMismatch,
                path,
                "expected an object",
            )),
        }
    }

    fn single(name: &str, node: SchemaNode) -> Self {
        PayloadSchema {
            fields: BTreeMap::from([(name.to_string(), node)]),
        }
    }
}

fn named_blob() -> [(&'static str, SchemaNode); 2] {
    [
        ("name", SchemaNode::Leaf(LeafType::FilenameText)),
        ("data", SchemaNode::Leaf(LeafType::Base64Bytes)),
    ]
}

fn item_flag() -> SchemaNode {
    SchemaNode::object([
        ("item", SchemaNode::Leaf(LeafType::Text)),
        ("selected", SchemaNode::Leaf(LeafType::Boolean)),
    ])
}

/// Shape of the data a consumer sends back for a component. Deterministic
/// in `props`; empty for output kinds.
pub fn derive_payload_schema(props: &Props) -> PayloadSchema {
    use LeafType::*;
    match props {
        Props::FileUpload {
            min_files,
            max_files,
            ..
        } => PayloadSchema::single(
            "files",
            SchemaNode::list(SchemaNode::object(named_blob()), *min_files, *max_files),
        ),
        Props::TextIn { num_inputs, .. } => PayloadSchema::single(
            "texts",
            SchemaNode::list(SchemaNode::Leaf(Text), *num_inputs, *num_inputs),
        ),
        Props::ListSelectOne { items, .. } | Props::ListSelectMulti { items, .. } => {
            let n = items.len() as u32;
            PayloadSchema::single("items", SchemaNode::list(item_flag(), n, n))
        }
        Props::ImageWithSelectOne { .. } | Props::ImageWithSelectMulti { .. } => {
            let [name, data] = named_blob();
            PayloadSchema::single(
                "images",
                SchemaNode::list(
                    SchemaNode::object([name, data, ("attributes", SchemaNode::list(item_flag(), 0, 0))]),
                    0,
                    0,
                ),
            )
        }
        Props::ImageWithTextIn { .. } => {
            let [name, data] = named_blob();
            PayloadSchema::single(
                "images",
                SchemaNode::list(
                    SchemaNode::object([name, data, ("text", SchemaNode::Leaf(Text))]),
                    0,
                    0,
                ),
            )
        }
        Props::DocumentWithTextIn { .. } => PayloadSchema::single(
            "documents",
            SchemaNode::list(
                SchemaNode::object([
                    ("name", SchemaNode::Leaf(FilenameText)),
                    ("data", SchemaNode::Leaf(Text)),
                    ("text", SchemaNode::Leaf(Text)),
                ]),
                0,
                0,
            ),
        ),
        Props::FileDownload { .. }
        | Props::TextView { .. }
        | Props::ImageView { .. }
        | Props::DocumentView { .. } => PayloadSchema::default(),
    }
}

/// Shape of the data a handler embeds in a rendered component (the images
/// and candidate items to select from, the texts to show, ...). Empty for
/// kinds that render from props alone.
pub fn embedded_schema(props: &Props) -> PayloadSchema {
    use LeafType::*;
    let optional_text = || SchemaNode::Optional(Box::new(SchemaNode::Leaf(Text)));
    let document = |extra: Option<SchemaNode>| {
        let mut fields = BTreeMap::from([
            ("name".to_string(), SchemaNode::Leaf(FilenameText)),
            ("data".to_string(), SchemaNode::Leaf(Text)),
        ]);
        if let Some(extra) = extra {
            fields.insert("text".to_string(), extra);
        }
        SchemaNode::list(SchemaNode::Object(fields), 0, 0)
    };
    match props {
        Props::FileDownload { .. } => PayloadSchema::single(
            "files",
            SchemaNode::list(SchemaNode::object(named_blob()), 0, 0),
        ),
        Props::TextView { .. } => {
            PayloadSchema::single("texts", SchemaNode::list(SchemaNode::Leaf(Text), 0, 0))
        }
        Props::ImageWithSelectOne { .. } | Props::ImageWithSelectMulti { .. } => {
            let [name, data] = named_blob();
            PayloadSchema::single(
                "images",
                SchemaNode::list(
                    SchemaNode::object([
                        name,
                        data,
                        ("items", SchemaNode::list(SchemaNode::Leaf(Text), 0, 0)),
                    ]),
                    0,
                    0,
                ),
            )
        }
        Props::ImageWithTextIn { .. } => PayloadSchema::single(
            "images",
            SchemaNode::list(SchemaNode::object(named_blob()), 0, 0),
        ),
        Props::ImageView { .. } => {
            let [name, data] = named_blob();
            PayloadSchema::single(
                "images",
                SchemaNode::list(SchemaNode::object([name, data, ("text", optional_text())]), 0, 0),
            )
        }
        Props::DocumentWithTextIn { .. } => PayloadSchema::single("documents", document(None)),
        Props::DocumentView { .. } => {
            PayloadSchema::single("documents", document(Some(optional_text())))
        }
        Props::FileUpload { .. }
        | Props::TextIn { .. }
        | Props::ListSelectOne { .. }
        | Props::ListSelectMulti { .. } => PayloadSchema::default(),
    }
}
