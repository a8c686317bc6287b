//! Host side of a single invocation: spawn a fresh worker in a fresh
//! working directory, feed it one frame, collect one frame, enforce the
//! wall-clock limit and clean up.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Read, Write};
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::bundle::BundleKind;
use super::protocol::{read_frame_bytes, write_frame, InvokeRequest, InvokeResponse, InvokeStatus, MAX_FRAME_LEN};
use super::sandbox::SandboxPolicy;
use super::worker::{Isolation, WorkerSpec, WORKER_ARG};

const MAX_LOG_BYTES: usize = 256 * 1024;

/// How to start a worker process.
#[derive(Debug, Clone)]
pub struct WorkerCommand {
    pub program: PathBuf,
    pub args: Vec<OsString>,
}

impl WorkerCommand {
    /// The running executable in worker mode; it must call
    /// [`super::worker::run_if_requested`] at startup.
    pub fn current_exe() -> io::Result<Self> {
        Ok(WorkerCommand {
            program: std::env::current_exe()?,
            args: vec![WORKER_ARG.into()],
        })
    }

    /// A binary that accepts [`WORKER_ARG`] as its first argument.
    pub fn binary(program: impl Into<PathBuf>) -> Self {
        WorkerCommand {
            program: program.into(),
            args: vec![WORKER_ARG.into()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LauncherConfig {
    pub worker: WorkerCommand,
    /// Parent of the per-invocation working directories.
    pub jail_root: PathBuf,
    pub isolation: Isolation,
    /// Extra readable trees for `sdk-code` runtimes (interpreter, stdlib).
    pub runtime_read_only: Vec<PathBuf>,
    pub sdk_command: Option<Vec<String>>,
    /// Environment variables copied from the host; everything else is dropped.
    pub env_allow: Vec<String>,
    pub max_file_bytes: u64,
}

impl LauncherConfig {
    pub fn new(worker: WorkerCommand, jail_root: impl Into<PathBuf>) -> Self {
        LauncherConfig {
            worker,
            jail_root: jail_root.into(),
            isolation: Isolation::Enforced,
            runtime_read_only: ["/usr", "/lib", "/lib64", "/bin"].iter().map(PathBuf::from).collect(),
            sdk_command: None,
            env_allow: vec!["PATH".into(), "LANG".into()],
            max_file_bytes: 256 * 1024 * 1024,
        }
    }
}

/// Spawns one worker per request.
#[derive(Debug)]
pub struct Launcher {
    config: LauncherConfig,
    spawns: AtomicU64,
    seq: AtomicU64,
    last_pid: AtomicU32,
}

struct Exit {
    status: io::Result<ExitStatus>,
}

impl Launcher {
    pub fn new(config: LauncherConfig) -> io::Result<Self> {
        fs::create_dir_all(&config.jail_root)?;
        fs::set_permissions(&config.jail_root, fs::Permissions::from_mode(0o711))?;
        Ok(Launcher {
            config,
            spawns: AtomicU64::new(0),
            seq: AtomicU64::new(0),
            last_pid: AtomicU32::new(0),
        })
    }

    pub fn config(&self) -> &LauncherConfig {
        &self.config
    }

    pub fn spawn_count(&self) -> u64 {
        self.spawns.load(Ordering::Relaxed)
    }

    /// Process id of the most recently spawned worker.
    pub fn last_worker_pid(&self) -> u32 {
        self.last_pid.load(Ordering::Relaxed)
    }

    /// Runs `request` against a materialized bundle. Never fails: every
    /// problem is reported through the response status.
    pub fn invoke(&self, bundle_dir: &Path, kind: BundleKind, runner_dir: &Path, request: &InvokeRequest) -> InvokeResponse {
        let started = Instant::now();
        let workdir = self.config.jail_root.join(format!(
            "w{}-{}-{:016x}",
            std::process::id(),
            self.seq.fetch_add(1, Ordering::Relaxed),
            rand::random::<u64>()
        ));
        let mut resp = match fs::create_dir(&workdir) {
            Ok(()) => self.run(bundle_dir, kind, runner_dir, &workdir, request),
            Err(e) => InvokeResponse::failed(InvokeStatus::ProtocolError, format!("cannot create working directory: {e}")),
        };
        remove_tree(&workdir);
        resp.duration_ms = started.elapsed().as_millis() as u64;
        resp
    }

    fn run(&self, bundle_dir: &Path, kind: BundleKind, runner_dir: &Path, workdir: &Path, request: &InvokeRequest) -> InvokeResponse {
        let limits = request.limits;
        let mut read_only = vec![bundle_dir.to_path_buf(), runner_dir.to_path_buf()];
        if kind == BundleKind::SdkCode {
            read_only.extend(self.config.runtime_read_only.iter().cloned());
        }
        let spec = WorkerSpec {
            bundle_dir: bundle_dir.to_path_buf(),
            runner_dir: runner_dir.to_path_buf(),
            workdir: workdir.to_path_buf(),
            kind,
            isolation: self.config.isolation,
            policy: SandboxPolicy {
                read_only,
                read_write: vec![workdir.to_path_buf()],
                memory_bytes: limits.memory_bytes,
                cpu_seconds: limits.timeout_ms.div_ceil(1000) + 1,
                max_file_bytes: self.config.max_file_bytes,
            },
            sdk_command: self.config.sdk_command.clone(),
        };
        let mut cmd = Command::new(&self.config.worker.program);
        cmd.args(&self.config.worker.args)
            .arg(serde_json::to_string(&spec).expect("spec serializes"))
            .current_dir(workdir)
            .env_clear()
            .env("HOME", workdir)
            .env("TMPDIR", workdir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        for name in &self.config.env_allow {
            if let Some(v) = std::env::var_os(name) {
                cmd.env(name, v);
            }
        }
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => return InvokeResponse::failed(InvokeStatus::ProtocolError, format!("cannot start worker: {e}")),
        };
        self.spawns.fetch_add(1, Ordering::Relaxed);
        let pid = child.id();
        self.last_pid.store(pid, Ordering::Relaxed);

        let mut frame = Vec::new();
        if let Err(e) = write_frame(&mut frame, request) {
            kill_group(pid);
            let _ = child.wait();
            return InvokeResponse::failed(InvokeStatus::ProtocolError, e.to_string());
        }
        let mut stdin = child.stdin.take().expect("piped");
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&frame);
        });
        let stdout = child.stdout.take().expect("piped");
        let reader = thread::spawn(move || read_bounded(stdout, MAX_FRAME_LEN + 8));
        let stderr = child.stderr.take().expect("piped");
        let logger = thread::spawn(move || read_bounded(stderr, MAX_LOG_BYTES));

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let _ = tx.send(Exit { status: child.wait() });
        });
        let deadline = Duration::from_millis(limits.timeout_ms);
        let exit = match rx.recv_timeout(deadline) {
            Ok(exit) => Some(exit),
            Err(_) => {
                kill_group(pid);
                let _ = rx.recv();
                None
            }
        };
        // Descendants may still hold the pipes open.
        kill_group(pid);
        let _ = writer.join();
        let out = reader.join().unwrap_or_default();
        let logs = String::from_utf8_lossy(&logger.join().unwrap_or_default()).into_owned();

        let Some(exit) = exit else {
            let mut r = InvokeResponse::failed(
                InvokeStatus::Timeout,
                format!("worker exceeded the {} ms limit and was killed", limits.timeout_ms),
            );
            r.logs = logs;
            return r;
        };
        let mut resp = match read_frame_bytes(&out[..], MAX_FRAME_LEN) {
            Ok(body) => match serde_json::from_slice::<InvokeResponse>(&body) {
                Ok(r) => r.normalized(),
                Err(e) => InvokeResponse::failed(InvokeStatus::ProtocolError, format!("malformed response frame: {e}")),
            },
            Err(_) => match exit.status {
                Ok(s) if s.signal().is_some() => InvokeResponse::failed(
                    InvokeStatus::HandlerError,
                    format!("worker terminated by signal {}", s.signal().unwrap_or_default()),
                ),
                Ok(s) if !s.success() => InvokeResponse::failed(
                    InvokeStatus::HandlerError,
                    format!("worker exited with status {}", s.code().unwrap_or(-1)),
                ),
                Ok(_) => InvokeResponse::failed(InvokeStatus::ProtocolError, "worker exited without a response frame"),
                Err(e) => InvokeResponse::failed(InvokeStatus::ProtocolError, format!("cannot wait for worker: {e}")),
            },
        };
        resp.logs = match (logs.is_empty(), resp.logs.is_empty()) {
            (_, true) => logs,
            (true, false) => resp.logs,
            (false, false) => format!("{logs}{}", resp.logs),
        };
        resp
    }
}

fn kill_group(pid: u32) {
    unsafe {
        libc::kill(-(pid as i32), libc::SIGKILL);
    }
}

fn read_bounded<R: Read>(r: R, limit: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut r = r.take(limit as u64);
    let _ = r.read_to_end(&mut buf);
    // Drain the rest so the writer never blocks on a full pipe.
    let _ = io::copy(&mut r.into_inner(), &mut io::sink());
    buf
}

fn remove_tree(dir: &Path) {
    fn open_up(p: &Path) {
        let _ = fs::set_permissions(p, fs::Permissions::from_mode(0o700));
        if let Ok(entries) = fs::read_dir(p) {
            for e in entries.flatten() {
                if e.file_type().map(|t| t.is_dir()).unwrap_or(false) {
                    open_up(&e.path());
                }
            }
        }
    }
    if fs::remove_dir_all(dir).is_err() {
        open_up(dir);
        let _ = fs::remove_dir_all(dir);
    }
}
