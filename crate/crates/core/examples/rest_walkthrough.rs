// Start the HTTP service on a local port and drive it with plain HTTP:
// the publish handshake with blob uploads, then a run session.

use std::sync::Arc;

use modelport::digest::BlobDigest;
use modelport::runner::WorkerCommand;
use modelport::samples;
use modelport::server::BackgroundServer;
use modelport::service::{Service, ServiceConfig};
use serde_json::{json, Value};

async fn post(http: &reqwest::Client, url: String, body: Value) -> Result<Value, Box<dyn std::error::Error>> {
    let resp = http.post(url).json(&body).send().await?;
    let status = resp.status();
    let body: Value = resp.json().await?;
    if !status.is_success() {
        return Err(format!("{status}: {body}").into());
    }
    Ok(body)
}

pub fn run(worker: WorkerCommand) -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    let base = format!("http://{}", listener.local_addr()?);
    let mut config = ServiceConfig::new(dir.path(), b"example-secret".to_vec(), worker).with_api_key("alice", "alice-key");
    config.public_url = base.clone();
    let server = BackgroundServer::start_on(listener, Arc::new(Service::open(config)?))?;
    println!("serving on {}", server.base_url());

    let pkg = samples::vqg_package();
    tokio::runtime::Runtime::new()?.block_on(async {
        let http = reqwest::Client::new();
        let api = |path: &str| format!("{base}/api/v1{path}");

        let begin = post(&http, api("/publish/begin"), json!({"api_key": "alice-key", "model_slug": "vqg", "label": "demo"})).await?;
        let token = begin["token"].as_str().unwrap();
        println!("begin: version {} reserved", begin["version_id"]);

        let files: Vec<Value> = pkg
            .files
            .iter()
            .map(|(path, bytes)| json!({"path": path, "digest": BlobDigest::of(bytes), "size": bytes.len()}))
            .collect();
        let manifest = post(&http, api(&format!("/publish/{token}/manifest")), json!({"metadata": pkg.metadata, "files": files})).await?;
        for ticket in manifest["uploads"].as_array().unwrap() {
            let path = ticket["path"].as_str().unwrap();
            let status = http.put(ticket["url"].as_str().unwrap()).body(pkg.files[path].clone()).send().await?.status();
            println!("PUT {path}: {status}");
        }
        let record = post(&http, api(&format!("/publish/{token}/finalize")), json!({})).await?;
        println!("finalized version {}", record["version_id"]);

        let created = post(&http, api("/models/vqg/sessions"), json!({})).await?;
        let sid = created["session_id"].as_str().unwrap();
        let images = samples::upload_payload(&[("park.jpg", b"\x89PNG...")]);
        let detected = post(&http, api(&format!("/sessions/{sid}/steps/0")), json!({"payloads": [images]})).await?;
        let rendered = serde_json::from_value(detected["components"][0].clone())?;
        let selection = samples::selection_payload(&rendered, |_, items| items.iter().take(2).cloned().collect());
        let questions = post(&http, api(&format!("/sessions/{sid}/steps/1")), json!({"payloads": [selection]})).await?;
        println!("{}", questions["components"][0]["embedded_data"]["images"][0]["text"]);

        let err = post(&http, api("/models/vqg/versions/9/steps/0:invoke"), json!({})).await.unwrap_err();
        println!("error: {err}");
        Ok::<_, Box<dyn std::error::Error>>(())
    })
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    modelport::runner::run_if_requested();
    run(WorkerCommand::current_exe()?)
}
