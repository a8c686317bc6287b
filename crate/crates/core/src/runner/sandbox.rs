//! Self-confinement applied by a worker process before it touches a
//! request: resource limits, a Landlock filesystem/TCP ruleset and a
//! seccomp filter that refuses to create network sockets.

use std::io;
use std::path::PathBuf;

use landlock::{
    Access, AccessFs, AccessNet, CompatLevel, Compatible, Ruleset, RulesetAttr, RulesetCreatedAttr,
    RulesetStatus, Scope, ABI,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxPolicy {
    /// Readable (and executable) trees.
    pub read_only: Vec<PathBuf>,
    /// Trees the worker may modify; normally just its working directory.
    pub read_write: Vec<PathBuf>,
    pub memory_bytes: u64,
    pub cpu_seconds: u64,
    pub max_file_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxReport {
    pub landlock: String,
    pub seccomp: bool,
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("setrlimit({resource}) failed: {source}")]
    Rlimit { resource: &'static str, source: io::Error },
    #[error("landlock: {0}")]
    Landlock(String),
    #[error("seccomp: {0}")]
    Seccomp(io::Error),
}

/// Irreversibly confines the calling process. Call it while the process is
/// still single-threaded.
pub fn enter_sandbox(policy: &SandboxPolicy) -> Result<SandboxReport, SandboxError> {
    set_rlimit(libc::RLIMIT_AS, "RLIMIT_AS", policy.memory_bytes)?;
    set_rlimit(libc::RLIMIT_CPU, "RLIMIT_CPU", policy.cpu_seconds)?;
    set_rlimit(libc::RLIMIT_FSIZE, "RLIMIT_FSIZE", policy.max_file_bytes)?;
    set_rlimit(libc::RLIMIT_CORE, "RLIMIT_CORE", 0)?;
    let landlock = apply_landlock(policy)?;
    apply_seccomp()?;
    Ok(SandboxReport {
        landlock,
        seccomp: true,
    })
}

fn set_rlimit(resource: libc::__rlimit_resource_t, name: &'static str, value: u64) -> Result<(), SandboxError> {
    let lim = libc::rlimit {
        rlim_cur: value,
        rlim_max: value,
    };
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(SandboxError::Rlimit {
            resource: name,
            source: io::Error::last_os_error(),
        });
    }
    Ok(())
}

fn apply_landlock(policy: &SandboxPolicy) -> Result<String, SandboxError> {
    let abi = ABI::V6;
    let err = |e: landlock::RulesetError| SandboxError::Landlock(e.to_string());
    let status = Ruleset::default()
        .set_compatibility(CompatLevel::BestEffort)
        .handle_access(AccessFs::from_all(abi))
        .map_err(err)?
        .handle_access(AccessNet::BindTcp | AccessNet::ConnectTcp)
        .map_err(err)?
        .scope(Scope::AbstractUnixSocket | Scope::Signal)
        .map_err(err)?
        .create()
        .map_err(err)?
        .add_rules(landlock::path_beneath_rules(&policy.read_only, AccessFs::from_read(abi)))
        .map_err(err)?
        .add_rules(landlock::path_beneath_rules(&policy.read_write, AccessFs::from_all(abi)))
        .map_err(err)?
        .restrict_self()
        .map_err(err)?;
    Ok(match status.ruleset {
        RulesetStatus::FullyEnforced => "fully-enforced",
        RulesetStatus::PartiallyEnforced => "partially-enforced",
        RulesetStatus::NotEnforced => "not-enforced",
    }
    .to_string())
}

#[cfg(target_arch = "x86_64")]
const AUDIT_ARCH: u32 = 0xC000_003E;
#[cfg(target_arch = "aarch64")]
const AUDIT_ARCH: u32 = 0xC000_00B7;

const BPF_LD_W_ABS: u16 = 0x20;
const BPF_JEQ_K: u16 = 0x15;
const BPF_JGE_K: u16 = 0x35;
const BPF_RET_K: u16 = 0x06;

const RET_KILL_PROCESS: u32 = 0x8000_0000;
const RET_ERRNO: u32 = 0x0005_0000;
const RET_ALLOW: u32 = 0x7fff_0000;

const OFF_NR: u32 = 0;
const OFF_ARCH: u32 = 4;
const OFF_ARG0: u32 = 16;
const X32_SYSCALL_BIT: u32 = 0x4000_0000;

fn stmt(code: u16, k: u32) -> libc::sock_filter {
    libc::sock_filter { code, jt: 0, jf: 0, k }
}

fn jump(code: u16, k: u32, jt: u8, jf: u8) -> libc::sock_filter {
    libc::sock_filter { code, jt, jf, k }
}

/// socket(AF_INET | AF_INET6 | AF_PACKET) and io_uring_setup fail with
/// EACCES; foreign-architecture calls kill the process.
pub(crate) fn filter_program() -> Vec<libc::sock_filter> {
    let deny = RET_ERRNO | libc::EACCES as u32;
    vec![
        stmt(BPF_LD_W_ABS, OFF_ARCH),
        jump(BPF_JEQ_K, AUDIT_ARCH, 1, 0),
        stmt(BPF_RET_K, RET_KILL_PROCESS),
        stmt(BPF_LD_W_ABS, OFF_NR),
        jump(BPF_JGE_K, X32_SYSCALL_BIT, 6, 0),
        jump(BPF_JEQ_K, libc::SYS_io_uring_setup as u32, 5, 0),
        jump(BPF_JEQ_K, libc::SYS_socket as u32, 0, 5),
        stmt(BPF_LD_W_ABS, OFF_ARG0),
        jump(BPF_JEQ_K, libc::AF_INET as u32, 2, 0),
        jump(BPF_JEQ_K, libc::AF_INET6 as u32, 1, 0),
        jump(BPF_JEQ_K, libc::AF_PACKET as u32, 0, 1),
        stmt(BPF_RET_K, deny),
        stmt(BPF_RET_K, RET_ALLOW),
    ]
}

fn apply_seccomp() -> Result<(), SandboxError> {
    let mut program = filter_program();
    let prog = libc::sock_fprog {
        len: program.len() as u16,
        filter: program.as_mut_ptr(),
    };
    unsafe {
        if libc::prctl(libc::PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0 {
            return Err(SandboxError::Seccomp(io::Error::last_os_error()));
        }
        if libc::syscall(
            libc::SYS_seccomp,
            libc::SECCOMP_SET_MODE_FILTER,
            libc::SECCOMP_FILTER_FLAG_TSYNC,
            &prog as *const libc::sock_fprog,
        ) != 0
        {
            return Err(SandboxError::Seccomp(io::Error::last_os_error()));
        }
    }
    Ok(())
}
