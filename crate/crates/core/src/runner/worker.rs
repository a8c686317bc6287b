//! The worker side of the protocol. A worker is this crate's own binary
//! re-executed with [`WORKER_ARG`] and a JSON [`WorkerSpec`]; it sandboxes
//! itself, answers exactly one request and exits.

use std::fs;
use std::io::{self, Write};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::bundle::BundleKind;
use super::fixture::{interpret_fixture, FixtureError, FixtureSet, FIXTURE_FILE};
use super::protocol::{read_frame, write_frame, InvokeRequest, InvokeResponse, InvokeStatus, StateBlob, MAX_FRAME_LEN};
use super::sandbox::{enter_sandbox, SandboxPolicy};

/// First argument that switches a binary into worker mode.
pub const WORKER_ARG: &str = "__worker";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Isolation {
    Enforced,
    /// Separate process and stripped environment only. For comparisons in
    /// tests; never the default.
    Disabled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub bundle_dir: PathBuf,
    pub runner_dir: PathBuf,
    pub workdir: PathBuf,
    pub kind: BundleKind,
    pub isolation: Isolation,
    pub policy: SandboxPolicy,
    /// Program and arguments that serve `sdk-code` bundles over stdin/stdout.
    #[serde(default)]
    pub sdk_command: Option<Vec<String>>,
}

/// Runs the worker and exits if this process was started as one.
/// Binaries that can act as their own worker call this first in `main`.
pub fn run_if_requested() {
    let mut args = std::env::args_os().skip(1);
    if args.next().as_deref() != Some(WORKER_ARG.as_ref()) {
        return;
    }
    let code = match args.next().map(|a| serde_json::from_str::<WorkerSpec>(&a.to_string_lossy())) {
        Some(Ok(spec)) => run_worker(&spec),
        _ => {
            eprintln!("worker: missing or invalid spec argument");
            2
        }
    };
    std::process::exit(code);
}

fn respond(resp: &InvokeResponse) -> i32 {
    let out = io::stdout();
    match write_frame(out.lock(), resp) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("worker: cannot write response: {e}");
            1
        }
    }
}

/// Worker entry point; returns the process exit code.
pub fn run_worker(spec: &WorkerSpec) -> i32 {
    if spec.isolation == Isolation::Enforced {
        match enter_sandbox(&spec.policy) {
            Ok(report) => eprintln!("worker: sandbox landlock={} seccomp={}", report.landlock, report.seccomp),
            Err(e) => {
                return respond(&InvokeResponse::failed(
                    InvokeStatus::ProtocolError,
                    format!("sandbox setup failed: {e}"),
                ))
            }
        }
    }
    match spec.kind {
        BundleKind::Fixture => serve_fixture(spec),
        BundleKind::SdkCode => exec_sdk(spec),
    }
}

fn serve_fixture(spec: &WorkerSpec) -> i32 {
    let req: InvokeRequest = match read_frame(io::stdin().lock(), MAX_FRAME_LEN) {
        Ok(r) => r,
        Err(e) => {
            return respond(&InvokeResponse::failed(
                InvokeStatus::ProtocolError,
                format!("bad request frame: {e}"),
            ))
        }
    };
    let started = Instant::now();
    let set = match fs::read(spec.bundle_dir.join(FIXTURE_FILE))
        .map_err(|e| e.to_string())
        .and_then(|b| FixtureSet::parse(&b).map_err(|e| e.to_string()))
    {
        Ok(s) => s,
        Err(e) => return respond(&InvokeResponse::failed(InvokeStatus::ProtocolError, e)),
    };
    let handler = match set.get(&req.handler) {
        Ok(h) => h,
        Err(e) => return respond(&InvokeResponse::failed(InvokeStatus::ProtocolError, e.to_string())),
    };
    let state = req.state.as_ref().map(|s| s.0.as_slice());
    let mut resp = match interpret_fixture(handler, &req.payloads, state) {
        Ok(out) => {
            let components: Vec<Value> = out.components.iter().map(|c| c.to_json()).collect();
            let mut r = InvokeResponse::ok(components, out.state.map(StateBlob));
            r.logs = out.log.join("\n");
            r
        }
        Err(e @ (FixtureError::Raised(_) | FixtureError::UnsupportedPayload { .. })) => {
            InvokeResponse::failed(InvokeStatus::HandlerError, e.to_string())
        }
        Err(e) => InvokeResponse::failed(InvokeStatus::ProtocolError, e.to_string()),
    };
    resp.duration_ms = started.elapsed().as_millis() as u64;
    let _ = io::stderr().flush();
    respond(&resp)
}

fn exec_sdk(spec: &WorkerSpec) -> i32 {
    let Some((program, args)) = spec.sdk_command.as_ref().and_then(|c| c.split_first()) else {
        return respond(&InvokeResponse::failed(
            InvokeStatus::ProtocolError,
            "no runtime configured for sdk-code bundles",
        ));
    };
    let err = Command::new(program)
        .args(args)
        .env("MODELPORT_BUNDLE_DIR", &spec.bundle_dir)
        .env("MODELPORT_RUNNER_DIR", &spec.runner_dir)
        .exec();
    respond(&InvokeResponse::failed(
        InvokeStatus::ProtocolError,
        format!("cannot start sdk runtime `{program}`: {err}"),
    ))
}
