//! Runs generated programs as child processes and reads back the objective.
//!
//! Every run gets a fresh temporary directory. The child is placed in its own
//! process group so a timeout can kill everything it spawned. Programs report
//! their result on stdout with a line `OPTIMAL_OBJECTIVE=<decimal>`; only the
//! last such newline-terminated line counts.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::debug;
use wait_timeout::ChildExt;

pub const SENTINEL_PREFIX: &str = "OPTIMAL_OBJECTIVE=";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerConfig {
    /// Interpreter command; the program file path is appended as the last argument.
    pub command: Vec<String>,
    /// File name the program is written to inside the sandbox directory.
    pub program_file: String,
    pub timeout_ms: u64,
    /// Bytes of stdout/stderr retained (tail).
    pub max_output_bytes: usize,
    pub keep_artifacts: bool,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            command: vec!["python3".into()],
            program_file: "program.py".into(),
            timeout_ms: 60_000,
            max_output_bytes: 64 * 1024,
            keep_artifacts: false,
        }
    }
}

impl RunnerConfig {
    pub fn shell() -> Self {
        Self {
            command: vec!["sh".into()],
            program_file: "program.sh".into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    ObjectiveFound,
    NoSentinel,
    NonzeroExit,
    Timeout,
}

impl Outcome {
    pub fn is_execution_failure(self) -> bool {
        !matches!(self, Outcome::ObjectiveFound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub exit_status: Option<i32>,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub objective: Option<f64>,
    pub wall_time_ms: u64,
    pub outcome: Outcome,
    /// Sandbox directory, present only when artifacts are kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("runner not found: {0}")]
    RunnerNotFound(String),
    #[error("sandbox setup failed: {0}")]
    SandboxSetupFailed(String),
    #[error("program text is empty")]
    EmptyProgram,
}

fn sentinel_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^OPTIMAL_OBJECTIVE=([+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)\r?$",
        )
        .unwrap()
    })
}

/// Value of the last newline-terminated sentinel line in `stdout`.
pub fn parse_sentinel(stdout: &str) -> Option<f64> {
    let terminated = {
        let end = stdout.rfind('\n')?;
        &stdout[..end]
    };
    terminated
        .lines()
        .rev()
        .find_map(|line| sentinel_re().captures(line))
        .and_then(|c| c[1].parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

/// Reads a pipe to the end, keeping only the last `cap` bytes.
fn tail_reader<R: Read + Send + 'static>(mut pipe: R, cap: usize) -> JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut kept: Vec<u8> = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    kept.extend_from_slice(&buf[..n]);
                    if kept.len() > cap.saturating_mul(2).max(8192) {
                        let cut = kept.len() - cap;
                        kept.drain(..cut);
                    }
                }
            }
        }
        if kept.len() > cap {
            let cut = kept.len() - cap;
            kept.drain(..cut);
        }
        kept
    })
}

fn kill_group(pid: u32) {
    // SAFETY: signalling a process group we created; a stale id only yields ESRCH.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

/// Writes `program` into a fresh sandbox directory and runs it with `config`.
pub fn run_program(program: &str, config: &RunnerConfig) -> Result<ExecutionResult, ExecError> {
    if program.trim().is_empty() {
        return Err(ExecError::EmptyProgram);
    }
    let (exe, args) = config
        .command
        .split_first()
        .ok_or_else(|| ExecError::RunnerNotFound("empty runner command".into()))?;
    let dir = tempfile::Builder::new()
        .prefix("optinsight-run-")
        .tempdir()
        .map_err(|e| ExecError::SandboxSetupFailed(e.to_string()))?;
    let file = dir.path().join(&config.program_file);
    std::fs::write(&file, program).map_err(|e| ExecError::SandboxSetupFailed(e.to_string()))?;

    let started = Instant::now();
    let mut child = Command::new(exe)
        .args(args)
        .arg(&file)
        .current_dir(dir.path())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ExecError::RunnerNotFound(exe.clone()),
            _ => ExecError::SandboxSetupFailed(e.to_string()),
        })?;
    let pid = child.id();
    let out = tail_reader(
        child.stdout.take().expect("piped stdout"),
        config.max_output_bytes,
    );
    let err = tail_reader(
        child.stderr.take().expect("piped stderr"),
        config.max_output_bytes,
    );

    let status = child
        .wait_timeout(Duration::from_millis(config.timeout_ms))
        .map_err(|e| ExecError::SandboxSetupFailed(e.to_string()))?;
    let timed_out = status.is_none();
    let status = match status {
        Some(s) => {
            // Reap stragglers that may still hold the pipes open.
            kill_group(pid);
            Some(s)
        }
        None => {
            kill_group(pid);
            child.wait().ok()
        }
    };
    let stdout = String::from_utf8_lossy(&out.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err.join().unwrap_or_default()).into_owned();
    let wall_time_ms = started.elapsed().as_millis() as u64;

    let exit_status = status.and_then(|s| s.code());
    let (outcome, objective) = if timed_out {
        (Outcome::Timeout, None)
    } else if exit_status != Some(0) {
        (Outcome::NonzeroExit, None)
    } else {
        match parse_sentinel(&stdout) {
            Some(v) => (Outcome::ObjectiveFound, Some(v)),
            None => (Outcome::NoSentinel, None),
        }
    };
    debug!(?outcome, wall_time_ms, "program finished");

    let artifact_dir = if config.keep_artifacts {
        Some(dir.keep())
    } else {
        None
    };
    Ok(ExecutionResult {
        exit_status,
        stdout_tail: stdout,
        stderr_tail: stderr,
        objective,
        wall_time_ms,
        outcome,
        artifact_dir,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-4,
            abs: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("non-finite value in objective comparison (found {found}, truth {truth})")]
pub struct NonFinite {
    pub found: f64,
    pub truth: f64,
}

/// `|found - truth| <= max(abs, rel * |truth|)`.
pub fn verify_objective(found: f64, truth: f64, tol: Tolerance) -> Result<bool, NonFinite> {
    if !found.is_finite() || !truth.is_finite() {
        return Err(NonFinite { found, truth });
    }
    Ok((found - truth).abs() <= tol.abs.max(tol.rel * truth.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh() -> RunnerConfig {
        RunnerConfig {
            timeout_ms: 5_000,
            ..RunnerConfig::shell()
        }
    }

    #[test]
    fn sentinel_is_read() {
        let r = run_program("echo 'OPTIMAL_OBJECTIVE=42.0'\n", &sh()).unwrap();
        assert_eq!(r.outcome, Outcome::ObjectiveFound);
        assert_eq!(r.objective, Some(42.0));
    }

    #[test]
    fn last_sentinel_wins() {
        let r = run_program(
            "echo OPTIMAL_OBJECTIVE=1\necho OPTIMAL_OBJECTIVE=-2.5e1\necho done\n",
            &sh(),
        )
        .unwrap();
        assert_eq!(r.objective, Some(-25.0));
    }

    #[test]
    fn unterminated_sentinel_is_ignored() {
        assert_eq!(parse_sentinel("OPTIMAL_OBJECTIVE=3"), None);
        assert_eq!(
            parse_sentinel("OPTIMAL_OBJECTIVE=3\nOPTIMAL_OBJECTIVE=4"),
            Some(3.0)
        );
        assert_eq!(parse_sentinel("OPTIMAL_OBJECTIVE=abc\n"), None);
        assert_eq!(parse_sentinel(" OPTIMAL_OBJECTIVE=3\n"), None);
        assert_eq!(parse_sentinel("OPTIMAL_OBJECTIVE=.5\n"), Some(0.5));
    }

    #[test]
    fn clean_exit_without_sentinel() {
        let r = run_program("echo hello\n", &sh()).unwrap();
        assert_eq!(r.outcome, Outcome::NoSentinel);
        assert!(r.objective.is_none());
    }

    #[test]
    fn nonzero_exit_keeps_stderr() {
        let r = run_program("echo 'OPTIMAL_OBJECTIVE=1'\necho boom >&2\nexit 3\n", &sh()).unwrap();
        assert_eq!(r.outcome, Outcome::NonzeroExit);
        assert_eq!(r.exit_status, Some(3));
        assert!(r.objective.is_none());
        assert!(r.stderr_tail.contains("boom"));
    }

    #[test]
    fn sleeper_times_out_and_group_is_killed() {
        let cfg = RunnerConfig {
            timeout_ms: 1_000,
            ..sh()
        };
        let r = run_program("sleep 30 &\nsleep 30\n", &cfg).unwrap();
        assert_eq!(r.outcome, Outcome::Timeout);
        assert!(r.wall_time_ms >= 1_000);
        assert!(r.wall_time_ms < 10_000);
    }

    #[test]
    fn missing_runner_is_reported() {
        let cfg = RunnerConfig {
            command: vec!["/nonexistent/runner-xyz".into()],
            ..sh()
        };
        assert!(matches!(
            run_program("x", &cfg),
            Err(ExecError::RunnerNotFound(_))
        ));
    }

    #[test]
    fn output_is_capped_to_tail() {
        let cfg = RunnerConfig {
            max_output_bytes: 100,
            ..sh()
        };
        let r = run_program("i=0; while [ $i -lt 500 ]; do echo line$i; i=$((i+1)); done\necho OPTIMAL_OBJECTIVE=7\n", &cfg).unwrap();
        assert!(r.stdout_tail.len() <= 100);
        assert_eq!(r.objective, Some(7.0));
    }

    #[test]
    fn concurrent_runs_are_isolated() {
        let cfg = RunnerConfig {
            keep_artifacts: true,
            ..sh()
        };
        let handles: Vec<_> = (0..4)
            .map(|i| {
                let cfg = cfg.clone();
                std::thread::spawn(move || {
                    let prog = format!("echo {i} > mark.txt\nls | sort | tr '\\n' ' '\necho\necho OPTIMAL_OBJECTIVE={i}\n");
                    run_program(&prog, &cfg).unwrap()
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let mut dirs = std::collections::BTreeSet::new();
        for (i, r) in results.iter().enumerate() {
            let dir = r.artifact_dir.clone().unwrap();
            assert_eq!(
                std::fs::read_to_string(dir.join("mark.txt"))
                    .unwrap()
                    .trim(),
                i.to_string()
            );
            assert!(r.stdout_tail.starts_with("mark.txt program.sh"));
            dirs.insert(dir.clone());
            std::fs::remove_dir_all(dir).unwrap();
        }
        assert_eq!(dirs.len(), 4);
    }

    #[test]
    fn tolerance_cases() {
        let tol = Tolerance::default();
        assert!(verify_objective(100.0, 100.0, tol).unwrap());
        assert!(verify_objective(100.005, 100.0, tol).unwrap());
        assert!(!verify_objective(99.0, 100.0, tol).unwrap());
        assert!(verify_objective(f64::NAN, 1.0, tol).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reflexive(x in -1.0e12f64..1.0e12, rel in 0.0f64..1e-2, abs in 0.0f64..1.0) {
                let tol = Tolerance { rel, abs };
                prop_assert!(verify_objective(x, x, tol).unwrap());
            }

            #[test]
            fn sentinel_round_trips(v in -1.0e9f64..1.0e9) {
                let text = format!("noise\n{SENTINEL_PREFIX}{v}\n");
                prop_assert_eq!(parse_sentinel(&text), Some(v));
            }
        }
    }
}
