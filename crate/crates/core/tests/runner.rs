use std::collections::BTreeMap;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use modelport::metadata::{ComponentKind, ComponentSpec, Props};
use modelport::runner::{
    BundleKind, FixtureHandlerSpec, FixtureSet, InvokeRequest, InvokeStatus, Isolation, Launcher,
    LauncherConfig, Limits, WorkerCommand, FIXTURE_FILE,
};
use serde_json::{json, Value};
use tempfile::TempDir;

struct Rig {
    tmp: TempDir,
    bundle: PathBuf,
    runner: PathBuf,
}

fn rig(handlers: &[(&str, FixtureHandlerSpec)]) -> Rig {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    let runner = tmp.path().join("runner");
    fs::create_dir_all(&bundle).unwrap();
    fs::create_dir_all(&runner).unwrap();
    let set = FixtureSet {
        handlers: handlers.iter().map(|(n, h)| (n.to_string(), h.clone())).collect::<BTreeMap<_, _>>(),
    };
    fs::write(bundle.join(FIXTURE_FILE), set.to_bytes()).unwrap();
    Rig { tmp, bundle, runner }
}

impl Rig {
    fn launcher(&self, isolation: Isolation) -> Launcher {
        let mut cfg = LauncherConfig::new(
            WorkerCommand::binary(env!("CARGO_BIN_EXE_modelportd")),
            self.tmp.path().join("jail"),
        );
        cfg.isolation = isolation;
        Launcher::new(cfg).unwrap()
    }

    fn jail(&self) -> PathBuf {
        self.tmp.path().join("jail")
    }
}

fn request(handler: &str, payloads: Vec<Value>, timeout_ms: u64) -> InvokeRequest {
    InvokeRequest {
        model: "m".into(),
        version_id: 1,
        step: 0,
        handler: handler.into(),
        payloads,
        state: None,
        limits: Limits {
            timeout_ms,
            ..Limits::default()
        },
    }
}

fn texts(resp_components: &Option<Vec<Value>>) -> Vec<String> {
    let c = ComponentSpec::from_json(&resp_components.as_ref().unwrap()[0]).unwrap();
    c.embedded_data.unwrap()["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t.as_str().unwrap().to_string())
        .collect()
}

fn alive(pid: u32) -> bool {
    unsafe { libc::kill(pid as i32, 0) == 0 }
}

#[test]
fn echo_round_trip() {
    let r = rig(&[("echo", FixtureHandlerSpec::Echo { title: "out".into() })]);
    let l = r.launcher(Isolation::Enforced);
    let resp = l.invoke(&r.bundle, BundleKind::Fixture, &r.runner, &request("echo", vec![json!({"texts": ["hi"]})], 10_000));
    assert_eq!(resp.status, InvokeStatus::Ok, "{resp:?}");
    let comps = resp.components.as_ref().unwrap();
    assert_eq!(comps.len(), 1);
    assert_eq!(comps[0]["component"], json!("Text.View"));
    assert_eq!(texts(&resp.components), ["hi"]);
    assert!(resp.logs.contains("landlock="), "{}", resp.logs);
    assert_eq!(l.spawn_count(), 1);
}

#[test]
fn timeout_kills_the_worker() {
    let r = rig(&[("slow", FixtureHandlerSpec::Sleep { millis: 30_000, components: vec![] })]);
    let l = r.launcher(Isolation::Enforced);
    let started = std::time::Instant::now();
    let resp = l.invoke(&r.bundle, BundleKind::Fixture, &r.runner, &request("slow", vec![], 300));
    assert_eq!(resp.status, InvokeStatus::Timeout);
    assert!(resp.components.is_none());
    assert!(started.elapsed().as_secs() < 10);
    assert!(!alive(l.last_worker_pid()));
}

#[test]
fn failures_are_contained() {
    let r = rig(&[
        ("fail", FixtureHandlerSpec::Fail { message: "model exploded".into() }),
        ("crash", FixtureHandlerSpec::Crash),
        ("echo", FixtureHandlerSpec::Echo { title: String::new() }),
    ]);
    let l = r.launcher(Isolation::Enforced);
    let resp = l.invoke(&r.bundle, BundleKind::Fixture, &r.runner, &request("fail", vec![], 10_000));
    assert_eq!(resp.status, InvokeStatus::HandlerError);
    assert!(resp.error.unwrap().contains("model exploded"));

    let resp = l.invoke(&r.bundle, BundleKind::Fixture, &r.runner, &request("crash", vec![], 10_000));
    assert_eq!(resp.status, InvokeStatus::HandlerError, "{resp:?}");
    assert!(resp.components.is_none());

    let resp = l.invoke(&r.bundle, BundleKind::Fixture, &r.runner, &request("missing", vec![], 10_000));
    assert_eq!(resp.status, InvokeStatus::ProtocolError);

    let resp = l.invoke(&r.bundle, BundleKind::Fixture, &r.runner, &request("echo", vec![], 10_000));
    assert_eq!(resp.status, InvokeStatus::Ok);
}

fn probe_rig(secret: &Path, outside: &Path, addr: &str) -> Rig {
    rig(&[(
        "probe",
        FixtureHandlerSpec::Probe {
            connect: vec![addr.to_string()],
            write: vec![outside.display().to_string()],
            read: vec![secret.display().to_string()],
            env: vec!["MODELPORT_TEST_SECRET".into()],
        },
    )])
}

#[test]
fn sandbox_denies_network_escape_and_secrets() {
    let host = tempfile::tempdir().unwrap();
    let secret = host.path().join("signing.key");
    fs::write(&secret, b"top secret").unwrap();
    let outside = host.path().join("escaped.txt");
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::env::set_var("MODELPORT_TEST_SECRET", "1");

    let r = probe_rig(&secret, &outside, &addr);
    let enforced = r.launcher(Isolation::Enforced);
    let resp = enforced.invoke(&r.bundle, BundleKind::Fixture, &r.runner, &request("probe", vec![], 10_000));
    assert_eq!(resp.status, InvokeStatus::Ok, "{resp:?}");
    let lines = texts(&resp.components);
    assert!(lines[0].starts_with(&format!("connect {addr}: denied")), "{lines:?}");
    assert!(lines[1].contains(": denied"), "{lines:?}");
    assert!(lines[2].contains(": denied"), "{lines:?}");
    assert_eq!(lines[3], "env MODELPORT_TEST_SECRET: absent");
    assert!(!outside.exists());

    // Control: the same probe without confinement succeeds, so the denials
    // above come from the sandbox and not from the probe itself.
    let open = r.launcher(Isolation::Disabled);
    let resp = open.invoke(&r.bundle, BundleKind::Fixture, &r.runner, &request("probe", vec![], 10_000));
    let lines = texts(&resp.components);
    assert!(lines[0].ends_with("allowed"), "{lines:?}");
    assert!(lines[1].ends_with("allowed"), "{lines:?}");
    assert!(lines[2].ends_with("allowed"), "{lines:?}");
    assert!(outside.exists());
}

#[test]
fn invocations_share_no_filesystem_state() {
    let r = rig(&[("probe", FixtureHandlerSpec::Probe { connect: vec![], write: vec![], read: vec![], env: vec![] })]);
    let l = r.launcher(Isolation::Enforced);
    for _ in 0..2 {
        let resp = l.invoke(&r.bundle, BundleKind::Fixture, &r.runner, &request("probe", vec![], 10_000));
        assert_eq!(texts(&resp.components), ["ambient probe-marker: none"]);
    }
    assert_eq!(fs::read_dir(r.jail()).unwrap().count(), 0);
}

#[test]
fn sdk_code_without_runtime_is_a_protocol_error() {
    let r = rig(&[]);
    let l = r.launcher(Isolation::Enforced);
    let resp = l.invoke(&r.bundle, BundleKind::SdkCode, &r.runner, &request("main", vec![], 10_000));
    assert_eq!(resp.status, InvokeStatus::ProtocolError);
}

const SHIM: &str = r#"
import json, os, sys
raw = sys.stdin.buffer.read(8)
req = json.loads(sys.stdin.buffer.read(int(raw)))
sys.path.insert(0, os.environ["MODELPORT_BUNDLE_DIR"])
import model
comps = getattr(model, req["handler"])(req["payloads"])
body = json.dumps({"status": "ok", "components": comps}).encode()
sys.stdout.buffer.write(b"%08d" % len(body) + body)
"#;

#[test]
fn sdk_code_bundles_speak_the_same_frames() {
    if std::process::Command::new("python3").arg("-V").output().is_err() {
        eprintln!("python3 not available; skipping");
        return;
    }
    let r = rig(&[]);
    fs::write(
        r.bundle.join("model.py"),
        "def shout(payloads):\n    t = payloads[0]['texts'][0].upper()\n    return [{'component': 'Text.View', 'props': {'title': ''}, 'embedded_data': {'texts': [t]}}]\n",
    )
    .unwrap();
    let mut cfg = LauncherConfig::new(WorkerCommand::binary(env!("CARGO_BIN_EXE_modelportd")), r.jail());
    cfg.sdk_command = Some(vec!["python3".into(), "-c".into(), SHIM.into()]);
    let l = Launcher::new(cfg).unwrap();
    let resp = l.invoke(&r.bundle, BundleKind::SdkCode, &r.runner, &request("shout", vec![json!({"texts": ["hi"]})], 20_000));
    assert_eq!(resp.status, InvokeStatus::Ok, "{resp:?}");
    assert_eq!(texts(&resp.components), ["HI"]);
    let spec = ComponentSpec::from_json(&resp.components.unwrap()[0]).unwrap();
    assert_eq!(spec.props, Props::default_for(ComponentKind::TextView));
}
