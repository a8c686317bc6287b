use serde_json::Value;

use super::document::{ComponentSpec, StepSpec};
use super::error::{field, index, ErrorCode, ValidationErrors, Violation};
use super::props::Props;

/// Checks a consumer payload against the component's derived schema and
/// its prop constraints (cardinality, extensions, selection counts).
pub fn validate_payload(spec: &ComponentSpec, payload: &Value) -> Result<(), ValidationErrors> {
    let mut errors = Vec::new();
    if !spec.kind().is_input() {
        errors.push(Violation::new(
            ErrorCode::TypeMismatch,
            "",
            format!("{} is an output component and takes no payload", spec.kind()),
        ));
        return ValidationErrors(errors).into_result();
    }
    spec.payload_schema().validate(payload, "", &mut errors);
    check_props(&spec.props, payload, &mut errors);
    ValidationErrors(errors).into_result()
}

/// Validates the payload list for a step: one entry per input component,
/// in render order. Paths are prefixed with `payloads[i]`.
pub fn validate_step_payloads(step: &StepSpec, payloads: &[Value]) -> Result<(), ValidationErrors> {
    let specs: Vec<_> = step.input_components().collect();
    let mut errors = ValidationErrors::default();
    if specs.len() != payloads.len() {
        errors.0.push(Violation::new(
            ErrorCode::CardinalityViolation,
            "payloads",
            format!(
                "step `{}` expects {} payload(s), one per input component; got {}",
                step.name,
                specs.len(),
                payloads.len()
            ),
        ));
    }
    for (i, (spec, payload)) in specs.iter().zip(payloads).enumerate() {
        if let Err(e) = validate_payload(spec, payload) {
            errors.0.extend(e.prefixed(&index("payloads", i)));
        }
    }
    errors.into_result()
}

fn check_props(props: &Props, payload: &Value, errors: &mut Vec<Violation>) {
    match props {
        Props::FileUpload { types, .. } if !types.is_empty() => {
            for (i, file) in entries(payload, "files") {
                let Some(name) = file.get("name").and_then(Value::as_str) else {
                    continue;
                };
                let lower = name.to_ascii_lowercase();
                if !types.iter().any(|t| lower.ends_with(&t.to_ascii_lowercase())) {
                    errors.push(Violation::new(
                        ErrorCode::ExtensionNotAllowed,
                        field(&index("files", i), "name"),
                        format!("`{name}` does not have an accepted type ({})", types.join(", ")),
                    ));
                }
            }
        }
        Props::TextIn { max_length, .. } if *max_length > 0 => {
            for (i, text) in entries(payload, "texts") {
                if let Some(s) = text.as_str() {
                    let n = s.chars().count();
                    if n > *max_length as usize {
                        errors.push(Violation::new(
                            ErrorCode::LengthExceeded,
                            index("texts", i),
                            format!("{n} characters exceeds max_length {max_length}"),
                        ));
                    }
                }
            }
        }
        Props::ListSelectOne { items, .. } => {
            check_item_list(items, payload, errors);
            check_selection(count_selected(payload.get("items")), 1, 1, "items", errors);
        }
        Props::ListSelectMulti {
            items,
            min_selected,
            max_selected,
            ..
        } => {
            check_item_list(items, payload, errors);
            check_selection(
                count_selected(payload.get("items")),
                *min_selected,
                *max_selected,
                "items",
                errors,
            );
        }
        Props::ImageWithSelectOne { .. } => {
            for (i, image) in entries(payload, "images") {
                let attrs = image.get("attributes");
                let has_candidates = attrs.and_then(Value::as_array).is_some_and(|a| !a.is_empty());
                if has_candidates {
                    let path = field(&index("images", i), "attributes");
                    check_selection(count_selected(attrs), 1, 1, &path, errors);
                }
            }
        }
        Props::ImageWithSelectMulti { max_selected, .. } if *max_selected > 0 => {
            for (i, image) in entries(payload, "images") {
                let path = field(&index("images", i), "attributes");
                check_selection(count_selected(image.get("attributes")), 0, *max_selected, &path, errors);
            }
        }
        _ => {}
    }
}

fn entries<'a>(payload: &'a Value, key: &str) -> impl Iterator<Item = (usize, &'a Value)> {
    payload
        .get(key)
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .enumerate()
}

fn count_selected(list: Option<&Value>) -> usize {
    list.and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter(|it| it.get("selected") == Some(&Value::Bool(true)))
                .count()
        })
        .unwrap_or(0)
}

fn check_selection(selected: usize, min: u32, max: u32, path: &str, errors: &mut Vec<Violation>) {
    if max > 0 && selected > max as usize {
        errors.push(Violation::new(
            ErrorCode::SelectionLimitExceeded,
            path,
            format!("{selected} selected, at most {max} allowed"),
        ));
    } else if selected < min as usize {
        errors.push(Violation::new(
            ErrorCode::SelectionBelowMinimum,
            path,
            format!("{selected} selected, at least {min} required"),
        ));
    }
}

/// The payload must echo the component's items, in order.
fn check_item_list(items: &[String], payload: &Value, errors: &mut Vec<Violation>) {
    for (i, entry) in entries(payload, "items") {
        let Some(name) = entry.get("item").and_then(Value::as_str) else {
            continue;
        };
        if items.get(i).map(String::as_str) != Some(name) {
            errors.push(Violation::new(
                ErrorCode::UnknownItem,
                field(&index("items", i), "item"),
                format!("`{name}` is not item {i} of this component"),
            ));
        }
    }
}
