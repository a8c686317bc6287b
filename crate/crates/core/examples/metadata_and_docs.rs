// Parse a model's metadata, validate payloads against it and print the
// generated API description.

use modelport::metadata::{generate_api_doc, parse_metadata, validate_step_payloads};
use modelport::samples;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let raw = samples::vqg_metadata_json().to_string();
    let meta = parse_metadata(raw.as_bytes()).map_err(|e| format!("{e:?}"))?;
    println!("{}: {} steps", meta.model_name, meta.steps.len());
    for (k, step) in meta.steps.iter().enumerate() {
        let kinds: Vec<_> = step.inputs.iter().map(|c| c.kind().name()).collect();
        println!("  step {k} `{}`: {}", step.name, kinds.join(", "));
    }

    let two = samples::upload_payload(&[("a.jpg", b"..."), ("b.png", b"...")]);
    validate_step_payloads(&meta.steps[0], &[two]).map_err(|e| format!("{e:?}"))?;
    println!("two images: accepted");

    let names: Vec<String> = (0..6).map(|i| format!("{i}.jpg")).collect();
    let six: Vec<(&str, &[u8])> = names.iter().map(|n| (n.as_str(), b"...".as_slice())).collect();
    let errors = validate_step_payloads(&meta.steps[0], &[samples::upload_payload(&six)])
        .expect_err("six files exceed max_files");
    for v in errors.iter() {
        println!("six images: {:?} at {}: {}", v.code, v.path, v.message);
    }

    let doc = generate_api_doc(&meta);
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
