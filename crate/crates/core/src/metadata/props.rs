//! Per-kind component properties: parsing with defaults, constraint checks
//! and serialization. A numeric limit of `0` means "unbounded".

use std::collections::BTreeSet;

use serde_json::{json, Map, Value};

use super::catalog::ComponentKind;
use super::error::{field, index, ErrorCode, Violation};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Props {
    FileUpload {
        title: String,
        min_files: u32,
        max_files: u32,
        /// Accepted extensions including the dot; empty accepts anything.
        types: Vec<String>,
    },
    FileDownload {
        title: String,
    },
    TextIn {
        title: String,
        num_inputs: u32,
        max_length: u32,
    },
    TextView {
        title: String,
    },
    ListSelectOne {
        title: String,
        items: Vec<String>,
    },
    ListSelectMulti {
        title: String,
        items: Vec<String>,
        min_selected: u32,
        max_selected: u32,
    },
    ImageWithSelectOne {
        title: String,
    },
    ImageWithSelectMulti {
        title: String,
        /// Per-image selection limit.
        max_selected: u32,
    },
    ImageWithTextIn {
        title: String,
    },
    ImageView {
        title: String,
    },
    DocumentWithTextIn {
        title: String,
    },
    DocumentView {
        title: String,
    },
}

impl Props {
    /// Default props for `kind`. Kinds that require items get a single
    /// placeholder item so the defaults are always valid.
    pub fn default_for(kind: ComponentKind) -> Props {
        let title = String::new();
        match kind {
            ComponentKind::FileUpload => Props::FileUpload {
                title,
                min_files: 1,
                max_files: 1,
                types: Vec::new(),
            },
            ComponentKind::FileDownload => Props::FileDownload { title },
            ComponentKind::TextIn => Props::TextIn {
                title,
                num_inputs: 1,
                max_length: 0,
            },
            ComponentKind::TextView => Props::TextView { title },
            ComponentKind::ListSelectOne => Props::ListSelectOne {
                title,
                items: vec!["item".to_string()],
            },
            ComponentKind::ListSelectMulti => Props::ListSelectMulti {
                title,
                items: vec!["item".to_string()],
                min_selected: 0,
                max_selected: 0,
            },
            ComponentKind::ImageWithSelectOne => Props::ImageWithSelectOne { title },
            ComponentKind::ImageWithSelectMulti => Props::ImageWithSelectMulti {
                title,
                max_selected: 0,
            },
            ComponentKind::ImageWithTextIn => Props::ImageWithTextIn { title },
            ComponentKind::ImageView => Props::ImageView { title },
            ComponentKind::DocumentWithTextIn => Props::DocumentWithTextIn { title },
            ComponentKind::DocumentView => Props::DocumentView { title },
        }
    }

    pub fn kind(&self) -> ComponentKind {
        match self {
            Props::FileUpload { .. } => ComponentKind::FileUpload,
            Props::FileDownload { .. } => ComponentKind::FileDownload,
            Props::TextIn { .. } => ComponentKind::TextIn,
            Props::TextView { .. } => ComponentKind::TextView,
            Props::ListSelectOne { .. } => ComponentKind::ListSelectOne,
            Props::ListSelectMulti { .. } => ComponentKind::ListSelectMulti,
            Props::ImageWithSelectOne { .. } => ComponentKind::ImageWithSelectOne,
            Props::ImageWithSelectMulti { .. } => ComponentKind::ImageWithSelectMulti,
            Props::ImageWithTextIn { .. } => ComponentKind::ImageWithTextIn,
            Props::ImageView { .. } => ComponentKind::ImageView,
            Props::DocumentWithTextIn { .. } => ComponentKind::DocumentWithTextIn,
            Props::DocumentView { .. } => ComponentKind::DocumentView,
        }
    }

    pub fn title(&self) -> &str {
        match self {
            Props::FileUpload { title, .. }
            | Props::FileDownload { title }
            | Props::TextIn { title, .. }
            | Props::TextView { title }
            | Props::ListSelectOne { title, .. }
            | Props::ListSelectMulti { title, .. }
            | Props::ImageWithSelectOne { title }
            | Props::ImageWithSelectMulti { title, .. }
            | Props::ImageWithTextIn { title }
            | Props::ImageView { title }
            | Props::DocumentWithTextIn { title }
            | Props::DocumentView { title } => title,
        }
    }

    /// Parses props for `kind` from a JSON object, filling defaults and
    /// appending every violation found to `errors`.
    pub fn parse(
        kind: ComponentKind,
        raw: &Map<String, Value>,
        path: &str,
        errors: &mut Vec<Violation>,
    ) -> Props {
        let mut r = Reader::new(raw, path, errors);
        let title = r.text("title");
        let props = match kind {
            ComponentKind::FileUpload => Props::FileUpload {
                title,
                min_files: r.count("min_files", 1),
                max_files: r.count("max_files", 1),
                types: r.strings("types", Vec::new()),
            },
            ComponentKind::FileDownload => Props::FileDownload { title },
            ComponentKind::TextIn => Props::TextIn {
                title,
                num_inputs: r.count("num_inputs", 1),
                max_length: r.count("max_length", 0),
            },
            ComponentKind::TextView => Props::TextView { title },
            ComponentKind::ListSelectOne => Props::ListSelectOne {
                title,
                items: r.strings("items", vec!["item".to_string()]),
            },
            ComponentKind::ListSelectMulti => Props::ListSelectMulti {
                title,
                items: r.strings("items", vec!["item".to_string()]),
                min_selected: r.count("min_selected", 0),
                max_selected: r.count("max_selected", 0),
            },
            ComponentKind::ImageWithSelectOne => Props::ImageWithSelectOne { title },
            ComponentKind::ImageWithSelectMulti => Props::ImageWithSelectMulti {
                title,
                max_selected: r.count("max_selected", 0),
            },
            ComponentKind::ImageWithTextIn => Props::ImageWithTextIn { title },
            ComponentKind::ImageView => Props::ImageView { title },
            ComponentKind::DocumentWithTextIn => Props::DocumentWithTextIn { title },
            ComponentKind::DocumentView => Props::DocumentView { title },
        };
        r.finish();
        props.check(path, errors);
        props
    }

    /// Checks the per-kind constraint table.
    pub fn check(&self, path: &str, errors: &mut Vec<Violation>) {
        let bad = |errors: &mut Vec<Violation>, key: &str, msg: String| {
            errors.push(Violation::new(
                ErrorCode::PropConstraintViolation,
                field(path, key),
                msg,
            ))
        };
        match self {
            Props::FileUpload {
                min_files,
                max_files,
                types,
                ..
            } => {
                if *min_files < 1 {
                    bad(errors, "min_files", "min_files must be at least 1".into());
                }
                if *max_files != 0 && max_files < min_files {
                    bad(
                        errors,
                        "max_files",
                        format!("max_files ({max_files}) is below min_files ({min_files})"),
                    );
                }
                let mut seen = BTreeSet::new();
                for (i, t) in types.iter().enumerate() {
                    let p = index(&field(path, "types"), i);
                    if !t.starts_with('.') || t.len() < 2 {
                        errors.push(Violation::new(
                            ErrorCode::PropConstraintViolation,
                            p,
                            format!("file type `{t}` must start with `.`"),
                        ));
                    } else if !seen.insert(t.to_ascii_lowercase()) {
                        errors.push(Violation::new(
                            ErrorCode::PropConstraintViolation,
                            p,
                            format!("duplicate file type `{t}`"),
                        ));
                    }
                }
            }
            Props::TextIn { num_inputs, .. } => {
                if *num_inputs < 1 {
                    bad(errors, "num_inputs", "num_inputs must be at least 1".into());
                }
            }
            Props::ListSelectOne { items, .. } => check_items(items, path, errors),
            Props::ListSelectMulti {
                items,
                min_selected,
                max_selected,
                ..
            } => {
                check_items(items, path, errors);
                if *max_selected != 0 && max_selected < min_selected {
                    bad(
                        errors,
                        "max_selected",
                        format!(
                            "max_selected ({max_selected}) is below min_selected ({min_selected})"
                        ),
                    );
                }
                if *min_selected as usize > items.len() {
                    bad(
                        errors,
                        "min_selected",
                        format!(
                            "min_selected ({min_selected}) exceeds the {} available items",
                            items.len()
                        ),
                    );
                }
            }
            _ => {}
        }
    }

    /// Every prop, defaults included, as a JSON object.
    pub fn to_json(&self) -> Value {
        match self {
            Props::FileUpload {
                title,
                min_files,
                max_files,
                types,
            } => json!({
                "title": title,
                "min_files": min_files,
                "max_files": max_files,
                "types": types,
            }),
            Props::TextIn {
                title,
                num_inputs,
                max_length,
            } => json!({"title": title, "num_inputs": num_inputs, "max_length": max_length}),
            Props::ListSelectOne { title, items } => json!({"title": title, "items": items}),
            Props::ListSelectMulti {
                title,
                items,
                min_selected,
                max_selected,
            } => json!({
                "title": title,
                "items": items,
                "min_selected": min_selected,
                "max_selected": max_selected,
            }),
            Props::ImageWithSelectMulti {
                title,
                max_selected,
            } => json!({"title": title, "max_selected": max_selected}),
            other => json!({"title": other.title()}),
        }
    }
}

fn check_items(items: &[String], path: &str, errors: &mut Vec<Violation>) {
    let items_path = field(path, "items");
    if items.is_empty() {
        errors.push(Violation::new(
            ErrorCode::PropConstraintViolation,
            items_path.clone(),
            "at least one item is required",
        ));
    }
    let mut seen = BTreeSet::new();
    for (i, item) in items.iter().enumerate() {
        if !seen.insert(item.as_str()) {
            errors.push(Violation::new(
                ErrorCode::PropConstraintViolation,
                index(&items_path, i),
                format!("duplicate item `{item}`"),
            ));
        }
    }
}

/// Pulls typed props out of a JSON object, remembering which keys were used
/// so leftovers can be reported.
struct Reader<'a> {
    raw: &'a Map<String, Value>,
    path: &'a str,
    used: BTreeSet<&'static str>,
    errors: &'a mut Vec<Violation>,
}

impl<'a> Reader<'a> {
    fn new(raw: &'a Map<String, Value>, path: &'a str, errors: &'a mut Vec<Violation>) -> Self {
        Reader {
            raw,
            path,
            used: BTreeSet::new(),
            errors,
        }
    }

    fn mismatch(&mut self, key: &str, expected: &str) {
        self.errors.push(Violation::new(
            ErrorCode::TypeMismatch,
            field(self.path, key),
            format!("expected {expected}"),
        ));
    }

    fn text(&mut self, key: &'static str) -> String {
        self.used.insert(key);
        match self.raw.get(key) {
            None => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                self.mismatch(key, "a string");
                String::new()
            }
        }
    }

    fn count(&mut self, key: &'static str, default: u32) -> u32 {
        self.used.insert(key);
        match self.raw.get(key) {
            None => default,
            Some(v) => match v.as_u64().and_then(|n| u32::try_from(n).ok()) {
                Some(n) => n,
                None => {
                    self.mismatch(key, "a non-negative integer");
                    default
                }
            },
        }
    }

    fn strings(&mut self, key: &'static str, default: Vec<String>) -> Vec<String> {
        self.used.insert(key);
        match self.raw.get(key) {
            None => default,
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    match item.as_str() {
                        Some(s) => out.push(s.to_string()),
                        None => self.errors.push(Violation::new(
                            ErrorCode::TypeMismatch,
                            index(&field(self.path, key), i),
                            "expected a string",
                        )),
                    }
                }
                out
            }
            Some(_) => {
                self.mismatch(key, "an array of strings");
                default
            }
        }
    }

    fn finish(self) {
        for key in self.raw.keys() {
            if !self.used.contains(key.as_str()) {
                self.errors.push(Violation::new(
                    ErrorCode::PropConstraintViolation,
                    field(self.path, key),
                    format!("unknown property `{key}`"),
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(kind: ComponentKind, raw: Value) -> (Props, Vec<Violation>) {
        let mut errors = Vec::new();
        let props = Props::parse(kind, raw.as_object().unwrap(), "p", &mut errors);
        (props, errors)
    }

    #[test]
    fn file_upload_defaults() {
        let (props, errors) = parse(ComponentKind::FileUpload, json!({}));
        assert!(errors.is_empty());
        assert_eq!(props, Props::default_for(ComponentKind::FileUpload));
        assert_eq!(
            props.to_json(),
            json!({"title": "", "min_files": 1, "max_files": 1, "types": []})
        );
    }

    #[test]
    fn defaults_are_valid_for_every_kind() {
        for kind in ComponentKind::ALL {
            let mut errors = Vec::new();
            let props = Props::default_for(kind);
            props.check("p", &mut errors);
            assert!(errors.is_empty(), "{kind}: {errors:?}");
            assert_eq!(props.kind(), kind);
            let (reparsed, errors) = parse(kind, props.to_json());
            assert!(errors.is_empty());
            assert_eq!(reparsed, props);
        }
    }

    #[test]
    fn min_above_max_is_located() {
        let (_, errors) = parse(
            ComponentKind::FileUpload,
            json!({"min_files": 3, "max_files": 2}),
        );
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].path, "p.max_files");
    }

    #[test]
    fn unbounded_max_accepts_any_min() {
        let (_, errors) = parse(
            ComponentKind::FileUpload,
            json!({"min_files": 7, "max_files": 0}),
        );
        assert!(errors.is_empty());
    }

    #[test]
    fn reports_all_problems_at_once() {
        let (_, errors) = parse(
            ComponentKind::FileUpload,
            json!({"min_files": 0, "types": ["jpg", 3], "colour": "red", "title": 1}),
        );
        let paths: Vec<_> = errors.iter().map(|e| e.path.as_str()).collect();
        assert!(paths.contains(&"p.min_files"));
        assert!(paths.contains(&"p.types[0]"));
        assert!(paths.contains(&"p.types[1]"));
        assert!(paths.contains(&"p.colour"));
        assert!(paths.contains(&"p.title"));
    }

    #[test]
    fn select_lists_need_unique_items() {
        let (_, errors) = parse(
            ComponentKind::ListSelectOne,
            json!({"items": ["a", "b", "a"]}),
        );
        assert_eq!(errors[0].path, "p.items[2]");
        let (_, errors) = parse(ComponentKind::ListSelectMulti, json!({"items": []}));
        assert_eq!(errors[0].path, "p.items");
    }
}
