// Publish the sample visual question generation model in-process, then
// run it step by step, re-run a step and invoke a step directly.

use std::sync::Arc;

use modelport::orchestrator::VersionSelector;
use modelport::runner::WorkerCommand;
use modelport::samples;
use modelport::service::{Service, ServiceConfig};

pub fn run(worker: WorkerCommand) -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = ServiceConfig::new(dir.path(), b"example-secret".to_vec(), worker).with_api_key("alice", "alice-key");
    let service = Arc::new(Service::open(config)?);

    let record = service
        .registry
        .publish_package("alice-key", "vqg", "first", None, &samples::vqg_package())?;
    println!("published vqg v{} ({} artifacts)", record.version_id, record.artifacts.len());

    let orch = &service.orchestrator;
    let session = orch.create_session("vqg", VersionSelector::Live)?;
    println!("session {} renders {:?}", session.session_id, session.results[0].components[0].kind());

    let images = samples::upload_payload(&[("park.jpg", b"\x89PNG..."), ("kitchen.jpg", b"\xff\xd8...")]);
    let detected = orch.submit_step(&session.session_id, 0, vec![images.clone()])?;
    let selection = samples::selection_payload(&detected.components[0], |_, items| items.iter().take(2).cloned().collect());
    let questions = orch.submit_step(&session.session_id, 1, vec![selection])?;
    for image in questions.components[0].embedded_data.as_ref().unwrap()["images"].as_array().unwrap() {
        println!("{}: {}", image["name"].as_str().unwrap(), image["text"]);
    }

    let fewer = samples::selection_payload(&detected.components[0], |_, items| items.iter().take(1).cloned().collect());
    let again = orch.rerun_step(&session.session_id, 1, vec![fewer])?;
    println!("after re-run: {}", again.components[0].embedded_data.as_ref().unwrap()["images"][0]["text"]);

    let direct = orch.invoke_direct("vqg", record.version_id, 1, vec![images], None)?;
    assert_eq!(direct.components, detected.components);
    println!("direct invocation matches the session; state token {}", direct.state_token.unwrap_or_default());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    modelport::runner::run_if_requested();
    run(WorkerCommand::current_exe()?)
}
