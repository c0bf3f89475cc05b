//! Restarting a real process under a cutoff strategy, one abstract time unit
//! per `unit_seconds` of wall-clock time.

use std::io::{Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::sched::Strategy;

/// Time between the polite termination signal and the forced kill.
pub const DEFAULT_GRACE: Duration = Duration::from_secs(2);
const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Clone)]
pub struct WrapOptions {
    pub unit_seconds: f64,
    pub max_attempts: u64,
    pub seed: u64,
    /// Forward the output of killed attempts too.
    pub keep_output: bool,
    /// Treat a nonzero exit as a failed run and restart.
    pub retry_nonzero: bool,
    pub grace: Duration,
}

impl Default for WrapOptions {
    fn default() -> Self {
        Self {
            unit_seconds: 1.0,
            max_attempts: 100,
            seed: 0,
            keep_output: false,
            retry_nonzero: false,
            grace: DEFAULT_GRACE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Success,
    Killed,
    /// Exited with a nonzero status under `retry_nonzero`.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    /// `None` when the cutoff was unbounded.
    pub cutoff_seconds: Option<f64>,
    pub elapsed_seconds: f64,
    pub outcome: AttemptOutcome,
    /// Exit code of the process (`128 + signal` when it died from a signal).
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapReport {
    pub attempts: Vec<Attempt>,
    pub total_wall_seconds: f64,
    /// Status of the terminating attempt; `None` when every attempt was cut off.
    pub exit_status: Option<i32>,
}

impl WrapReport {
    pub fn succeeded(&self) -> bool {
        self.attempts.last().is_some_and(|a| a.outcome == AttemptOutcome::Success)
    }
}

fn exit_code(status: ExitStatus) -> i32 {
    status.code().or_else(|| status.signal().map(|s| 128 + s)).unwrap_or(-1)
}

fn reader<R: Read + Send + 'static>(src: Option<R>) -> Option<JoinHandle<Vec<u8>>> {
    src.map(|mut r| {
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = r.read_to_end(&mut buf);
            buf
        })
    })
}

fn signal_group(child: &Child, sig: libc::c_int) {
    // the child leads its own process group
    let pgid = child.id() as libc::pid_t;
    unsafe {
        libc::kill(-pgid, sig);
    }
}

fn wait_until(child: &mut Child, deadline: Option<Instant>) -> Result<Option<ExitStatus>> {
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Ok(None);
        }
        thread::sleep(POLL);
    }
}

fn terminate(child: &mut Child, grace: Duration) -> Result<ExitStatus> {
    signal_group(child, libc::SIGTERM);
    if let Some(status) = wait_until(child, Some(Instant::now() + grace))? {
        // stragglers in the group still get the hard kill
        signal_group(child, libc::SIGKILL);
        return Ok(status);
    }
    signal_group(child, libc::SIGKILL);
    Ok(child.wait()?)
}

struct RunResult {
    status: ExitStatus,
    killed: bool,
    elapsed: Duration,
    stdout: Vec<u8>,
    stderr: Vec<u8>,
}

fn run_once(command: &[String], cutoff: Option<Duration>, grace: Duration) -> Result<RunResult> {
    let start = Instant::now();
    let mut child = Command::new(&command[0])
        .args(&command[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|source| Error::Spawn { command: command[0].clone(), source })?;
    let out = reader(child.stdout.take());
    let err = reader(child.stderr.take());
    let deadline = cutoff.map(|c| start + c);
    let (status, killed) = match wait_until(&mut child, deadline)? {
        Some(status) => (status, false),
        None => (terminate(&mut child, grace)?, true),
    };
    let elapsed = start.elapsed();
    let join = |h: Option<JoinHandle<Vec<u8>>>| h.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
    Ok(RunResult { status, killed, elapsed, stdout: join(out), stderr: join(err) })
}

/// Runs `command` repeatedly, cutting attempt `k` off after `S_k · unit_seconds`.
///
/// Output of the terminating attempt is copied to `out` and `err`.
pub fn wrap(
    command: &[String],
    strategy: &Strategy,
    opts: &WrapOptions,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<WrapReport> {
    if command.is_empty() {
        return Err(Error::Config("no command given".into()));
    }
    if !(opts.unit_seconds > 0.0 && opts.unit_seconds.is_finite()) {
        return Err(domain(format!("unit_seconds must be positive, got {}", opts.unit_seconds)));
    }
    if opts.max_attempts == 0 {
        return Err(domain("max_attempts must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut schedule = strategy.schedule();
    let start = Instant::now();
    let mut attempts = Vec::new();
    let mut exit_status = None;
    for _ in 0..opts.max_attempts {
        let draw = schedule.next(&mut rng);
        let seconds = draw.cutoff * opts.unit_seconds;
        let cutoff = if draw.saturated { None } else { Duration::try_from_secs_f64(seconds).ok() };
        let run = run_once(command, cutoff, opts.grace)?;
        let code = exit_code(run.status);
        let outcome = if run.killed {
            AttemptOutcome::Killed
        } else if opts.retry_nonzero && code != 0 {
            AttemptOutcome::Failed
        } else {
            AttemptOutcome::Success
        };
        attempts.push(Attempt {
            cutoff_seconds: cutoff.map(|c| c.as_secs_f64()),
            elapsed_seconds: run.elapsed.as_secs_f64(),
            outcome,
            exit_code: (!run.killed).then_some(code),
        });
        if outcome == AttemptOutcome::Success || opts.keep_output {
            out.write_all(&run.stdout)?;
            err.write_all(&run.stderr)?;
        }
        if outcome == AttemptOutcome::Success {
            exit_status = Some(code);
            break;
        }
    }
    Ok(WrapReport { attempts, total_wall_seconds: start.elapsed().as_secs_f64(), exit_status })
}
