// Run a probing handler with and without confinement and compare what it
// was allowed to do.

use std::collections::BTreeMap;

use modelport::runner::{
    BundleKind, FixtureHandlerSpec, FixtureSet, InvokeRequest, Isolation, Launcher, LauncherConfig, Limits,
    WorkerCommand, FIXTURE_FILE,
};

pub fn run(worker: WorkerCommand) -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let (bundle, runner) = (dir.path().join("bundle"), dir.path().join("runner"));
    std::fs::create_dir_all(&bundle)?;
    std::fs::create_dir_all(&runner)?;
    let secret = dir.path().join("secret.txt");
    std::fs::write(&secret, "hunter2")?;
    let listener = std::net::TcpListener::bind("127.0.0.1:0")?;

    let probe = FixtureHandlerSpec::Probe {
        connect: vec![listener.local_addr()?.to_string()],
        write: vec![dir.path().join("escaped.txt").display().to_string()],
        read: vec![secret.display().to_string()],
        env: vec!["HOME".into()],
    };
    let set = FixtureSet { handlers: BTreeMap::from([("probe".to_string(), probe)]) };
    std::fs::write(bundle.join(FIXTURE_FILE), set.to_bytes())?;

    let request = InvokeRequest {
        model: "probe".into(),
        version_id: 1,
        step: 0,
        handler: "probe".into(),
        payloads: vec![],
        state: None,
        limits: Limits::default(),
    };
    for isolation in [Isolation::Enforced, Isolation::Disabled] {
        let mut config = LauncherConfig::new(worker.clone(), dir.path().join("jail"));
        config.isolation = isolation;
        let response = Launcher::new(config)?.invoke(&bundle, BundleKind::Fixture, &runner, &request);
        println!("{isolation:?}:");
        for line in response.components.unwrap_or_default()[0]["embedded_data"]["texts"].as_array().unwrap() {
            println!("  {}", line.as_str().unwrap());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    modelport::runner::run_if_requested();
    run(WorkerCommand::current_exe()?)
}
