//! Runs an application as a confined child process.
//!
//! The child gets `fs_root` as its working directory, write access only
//! beneath it (Landlock, where the kernel supports it), no TCP unless
//! allowed, and its own process group. A watchdog samples the group's
//! resident memory and CPU time from `/proc` and kills the whole group when
//! a limit is crossed. `RLIMIT_CPU` and `RLIMIT_AS` act as a backstop.

use std::fs;
use std::io;
use std::os::fd::{AsRawFd, OwnedFd};
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use landlock::{
    Access, AccessFs, AccessNet, CompatLevel, Compatible, PathBeneath, PathFd, Ruleset, RulesetAttr,
    RulesetCreatedAttr, ABI,
};
use serde::{Deserialize, Serialize};
use xw_protocol::AppKind;

pub const APP_FILE: &str = ".xw-app";
pub const PARAMS_FILE: &str = "params.in";
pub const STDERR_FILE: &str = ".xw-stderr";

const WATCH_TICK: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxLimits {
    pub max_memory: u64,
    pub max_cpu_seconds: f64,
    pub fs_root: PathBuf,
    #[serde(default)]
    pub allow_network: bool,
    /// File, relative to `fs_root`, whose contents become the result.
    #[serde(default = "default_output")]
    pub output_file: String,
}

fn default_output() -> String {
    "out.txt".into()
}

impl SandboxLimits {
    pub fn new(fs_root: impl Into<PathBuf>) -> Self {
        SandboxLimits {
            max_memory: 512 << 20,
            max_cpu_seconds: 3600.0,
            fs_root: fs_root.into(),
            allow_network: false,
            output_file: default_output(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Limit {
    Memory,
    Cpu,
}

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("{0:?} limit exceeded")]
    LimitExceeded(Limit),
    #[error("application failed ({status}): {stderr}")]
    NonzeroExit { status: ExitStatus, stderr: String },
    #[error("application produced no {0}")]
    MissingOutput(String),
    #[error("execution cancelled")]
    Cancelled,
    #[error("no executor for {0:?} applications")]
    Unsupported(AppKind),
    #[error("sandbox setup failed: {0}")]
    Setup(String),
    #[error("sandbox i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct SandboxOutput {
    pub status: ExitStatus,
    pub payload: Vec<u8>,
}

/// Shared flag that asks a running execution to stop.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Runs one kind of application.
pub trait Executor: Send + Sync {
    fn kind(&self) -> AppKind;

    fn execute(
        &self,
        app: &[u8],
        params: &[u8],
        limits: &SandboxLimits,
        cancel: &CancelToken,
    ) -> Result<SandboxOutput, SandboxError>;
}

/// Executes native binaries and scripts through [`sandbox_exec`].
#[derive(Debug, Default, Clone, Copy)]
pub struct NativeExecutor;

impl Executor for NativeExecutor {
    fn kind(&self) -> AppKind {
        AppKind::NativeBinary
    }

    fn execute(
        &self,
        app: &[u8],
        params: &[u8],
        limits: &SandboxLimits,
        cancel: &CancelToken,
    ) -> Result<SandboxOutput, SandboxError> {
        sandbox_exec(app, params, limits, cancel)
    }
}

/// Writes `app` and `params` into `fs_root`, runs the app with the params
/// file as its only argument, and returns the declared output file.
/// `fs_root` is emptied afterwards whatever the outcome.
pub fn sandbox_exec(
    app: &[u8],
    params: &[u8],
    limits: &SandboxLimits,
    cancel: &CancelToken,
) -> Result<SandboxOutput, SandboxError> {
    let root = &limits.fs_root;
    fs::create_dir_all(root)?;
    if fs::read_dir(root)?.next().is_some() {
        return Err(SandboxError::Setup(format!("{} is not empty", root.display())));
    }
    let result = run_in(app, params, limits, cancel);
    if let Err(e) = wipe_dir(root) {
        log::warn!("cannot wipe {}: {e}", root.display());
    }
    result
}

fn run_in(
    app: &[u8],
    params: &[u8],
    limits: &SandboxLimits,
    cancel: &CancelToken,
) -> Result<SandboxOutput, SandboxError> {
    let root = fs::canonicalize(&limits.fs_root)?;
    let app_path = root.join(APP_FILE);
    fs::write(&app_path, app)?;
    fs::set_permissions(&app_path, fs::Permissions::from_mode(0o500))?;
    let params_path = root.join(PARAMS_FILE);
    fs::write(&params_path, params)?;
    let stderr = fs::File::create(root.join(STDERR_FILE))?;

    let ruleset = confinement(&root, limits.allow_network);
    let mut cmd = Command::new(&app_path);
    cmd.arg(&params_path)
        .current_dir(&root)
        .env_clear()
        .env("PATH", "/usr/local/bin:/usr/bin:/bin")
        .env("HOME", &root)
        .env("TMPDIR", &root)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(stderr);
    // Slightly above the watchdog's threshold so the group-wide check fires first.
    let cpu = limits.max_cpu_seconds.ceil() as libc::rlim_t + 1;
    let mem = limits.max_memory.saturating_mul(2).saturating_add(256 << 20) as libc::rlim_t;
    let ruleset_fd = ruleset.as_ref().map(|fd| fd.as_raw_fd());
    // SAFETY: the closure only makes async-signal-safe system calls.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setpgid(0, 0) != 0 {
                return Err(io::Error::last_os_error());
            }
            // Die with the agent rather than linger as an orphan.
            if libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL, 0, 0, 0) != 0 {
                return Err(io::Error::last_os_error());
            }
            set_rlimit(libc::RLIMIT_CPU, cpu, cpu + 1)?;
            set_rlimit(libc::RLIMIT_AS, mem, mem)?;
            set_rlimit(libc::RLIMIT_CORE, 0, 0)?;
            if let Some(fd) = ruleset_fd {
                if libc::prctl(libc::PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0 {
                    return Err(io::Error::last_os_error());
                }
                if libc::syscall(libc::SYS_landlock_restrict_self, fd, 0) != 0 {
                    return Err(io::Error::last_os_error());
                }
            }
            Ok(())
        });
    }
    let child = spawn_retrying(&mut cmd)?;
    drop(ruleset);
    let status = watch(child, limits, cancel)?;
    if !status.success() {
        if status.signal() == Some(libc::SIGXCPU) {
            return Err(SandboxError::LimitExceeded(Limit::Cpu));
        }
        let tail = fs::read(root.join(STDERR_FILE)).unwrap_or_default();
        let tail = String::from_utf8_lossy(&tail[tail.len().saturating_sub(512)..])
            .trim()
            .to_string();
        return Err(SandboxError::NonzeroExit { status, stderr: tail });
    }
    let out = root.join(&limits.output_file);
    match fs::read(&out) {
        Ok(payload) => Ok(SandboxOutput { status, payload }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(SandboxError::MissingOutput(limits.output_file.clone())),
        Err(e) => Err(e.into()),
    }
}

fn set_rlimit(resource: libc::__rlimit_resource_t, soft: libc::rlim_t, hard: libc::rlim_t) -> io::Result<()> {
    let lim = libc::rlimit {
        rlim_cur: soft,
        rlim_max: hard,
    };
    // SAFETY: plain system call on a stack value.
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

/// Read and execute everywhere, write only under `root`. `None` when the
/// kernel offers no Landlock at all.
fn confinement(root: &Path, allow_network: bool) -> Option<OwnedFd> {
    let abi = ABI::V4;
    let build = || -> Result<Option<OwnedFd>, Box<dyn std::error::Error + Send + Sync>> {
        let mut ruleset = Ruleset::default()
            .set_compatibility(CompatLevel::BestEffort)
            .handle_access(AccessFs::from_all(abi))?;
        if !allow_network {
            ruleset = ruleset.handle_access(AccessNet::from_all(abi))?;
        }
        let mut created = ruleset
            .create()?
            .add_rule(PathBeneath::new(PathFd::new("/")?, AccessFs::from_read(abi)))?
            .add_rule(PathBeneath::new(PathFd::new(root)?, AccessFs::from_all(abi)))?;
        for dev in ["/dev/null", "/dev/zero", "/dev/urandom"] {
            if let Ok(fd) = PathFd::new(dev) {
                created = created.add_rule(PathBeneath::new(fd, AccessFs::ReadFile | AccessFs::WriteFile))?;
            }
        }
        Ok(created.into())
    };
    match build() {
        Ok(Some(fd)) => Some(fd),
        Ok(None) => {
            log::warn!("Landlock unavailable; only the working directory confines the task");
            None
        }
        Err(e) => {
            log::warn!("Landlock ruleset failed ({e}); only the working directory confines the task");
            None
        }
    }
}

// A freshly written executable can be briefly busy while another thread's
// fork still holds its write descriptor.
fn spawn_retrying(cmd: &mut Command) -> io::Result<Child> {
    let mut delay = Duration::from_millis(5);
    for _ in 0..8 {
        match cmd.spawn() {
            Err(e) if e.raw_os_error() == Some(libc::ETXTBSY) => {
                std::thread::sleep(delay);
                delay *= 2;
            }
            other => return other,
        }
    }
    cmd.spawn()
}

fn watch(mut child: Child, limits: &SandboxLimits, cancel: &CancelToken) -> Result<ExitStatus, SandboxError> {
    let pgid = child.id() as i32;
    let ticks = clock_ticks();
    let started = Instant::now();
    let verdict = loop {
        if let Some(status) = child.try_wait()? {
            kill_group(pgid);
            return Ok(status);
        }
        if cancel.is_cancelled() {
            break SandboxError::Cancelled;
        }
        let usage = group_usage(pgid, ticks);
        if usage.rss > limits.max_memory {
            break SandboxError::LimitExceeded(Limit::Memory);
        }
        if usage.cpu_seconds > limits.max_cpu_seconds {
            break SandboxError::LimitExceeded(Limit::Cpu);
        }
        std::thread::sleep(WATCH_TICK);
    };
    kill_group(pgid);
    let status = child.wait()?;
    log::debug!("sandbox child {pgid} stopped after {:?}: {status}", started.elapsed());
    Err(verdict)
}

fn kill_group(pgid: i32) {
    // SAFETY: signals a process group we created; failure means it is gone.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

fn clock_ticks() -> f64 {
    // SAFETY: sysconf has no preconditions.
    let t = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if t > 0 {
        t as f64
    } else {
        100.0
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Usage {
    rss: u64,
    cpu_seconds: f64,
}

/// Sums resident memory and CPU time (including reaped children) of every
/// live process in the group.
fn group_usage(pgid: i32, ticks: f64) -> Usage {
    // SAFETY: sysconf has no preconditions.
    let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) }.max(4096) as u64;
    let mut total = Usage::default();
    let Ok(dir) = fs::read_dir("/proc") else { return total };
    for entry in dir.flatten() {
        let name = entry.file_name();
        let Some(pid) = name.to_str().and_then(|s| s.parse::<u32>().ok()) else {
            continue;
        };
        let Ok(stat) = fs::read_to_string(format!("/proc/{pid}/stat")) else {
            continue;
        };
        if let Some(u) = parse_stat(&stat, pgid, ticks, page) {
            total.rss += u.rss;
            total.cpu_seconds += u.cpu_seconds;
        }
    }
    total
}

fn parse_stat(stat: &str, pgid: i32, ticks: f64, page: u64) -> Option<Usage> {
    // The command name may contain spaces; fields resume after its ')'.
    let rest = &stat[stat.rfind(')')? + 2..];
    let f: Vec<&str> = rest.split_whitespace().collect();
    // f[0] is field 3 (state); pgrp is field 5, utime..cstime 14..17, rss 24.
    if f.get(2)?.parse::<i32>().ok()? != pgid {
        return None;
    }
    let t = |i: usize| f.get(i).and_then(|v| v.parse::<u64>().ok()).unwrap_or(0);
    let cpu = (t(11) + t(12) + t(13) + t(14)) as f64 / ticks;
    Some(Usage {
        rss: t(21) * page,
        cpu_seconds: cpu,
    })
}

/// Removes everything inside `dir`, keeping `dir` itself.
pub fn wipe_dir(dir: &Path) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let meta = fs::symlink_metadata(&path)?;
        if meta.is_dir() {
            make_writable(&path);
            fs::remove_dir_all(&path)?;
        } else {
            fs::remove_file(&path)?;
        }
    }
    Ok(())
}

fn make_writable(dir: &Path) {
    let _ = fs::set_permissions(dir, fs::Permissions::from_mode(0o700));
    if let Ok(entries) = fs::read_dir(dir) {
        for e in entries.flatten() {
            if e.file_type().is_ok_and(|t| t.is_dir()) {
                make_writable(&e.path());
            }
        }
    }
}
