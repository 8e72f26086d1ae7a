//! Target execution with function-trace capture.
//!
//! The input is written to a file substituted for `@@` in the command line.
//! The child appends one executed function name per line to the file named
//! by `RF_TRACE_FILE`.

use std::fs::File;
use std::io::Read;
use std::os::unix::process::ExitStatusExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::seedgen::CommandLine;

pub const TRACE_ENV: &str = "RF_TRACE_FILE";
pub const DEFAULT_EXEC_TIMEOUT: Duration = Duration::from_secs(1);
const STDERR_EXCERPT: u64 = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExitKind {
    Clean { code: Option<i32> },
    Crash { class: String },
    Timeout,
}

impl ExitKind {
    pub fn is_crash(&self) -> bool {
        matches!(self, ExitKind::Crash { .. })
    }

    pub fn label(&self) -> String {
        match self {
            ExitKind::Clean { code: Some(c) } => format!("clean:{c}"),
            ExitKind::Clean { code: None } => "clean".into(),
            ExitKind::Crash { class } => format!("crash:{class}"),
            ExitKind::Timeout => "timeout".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub exit: ExitKind,
    /// Function names in execution order, as written by the target.
    pub trace: Vec<String>,
    pub duration: Duration,
    pub stderr_excerpt: String,
    /// The trace file could not be read; `trace` is empty.
    pub trace_missing: bool,
}

impl ExecResult {
    pub fn reached(&self, function: &str) -> bool {
        self.trace.iter().any(|f| f == function)
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("failed to spawn {program}: {reason}")]
    Spawn { program: String, reason: String },
    #[error("I/O error in {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("harness fault: {0}")]
    Harness(String),
}

pub fn signal_name(sig: i32) -> String {
    match sig {
        libc::SIGILL => "SIGILL".into(),
        libc::SIGABRT => "SIGABRT".into(),
        libc::SIGBUS => "SIGBUS".into(),
        libc::SIGFPE => "SIGFPE".into(),
        libc::SIGSEGV => "SIGSEGV".into(),
        libc::SIGKILL => "SIGKILL".into(),
        libc::SIGTRAP => "SIGTRAP".into(),
        other => format!("SIG{other}"),
    }
}

/// Executes one input and reports what happened.
pub trait Runner {
    fn run(&mut self, input: &[u8]) -> Result<ExecResult, ExecError>;
}

/// Runs the target as a child process per input.
#[derive(Debug)]
pub struct ProcessRunner {
    program: PathBuf,
    args: Vec<String>,
    exec_timeout: Duration,
    input_path: PathBuf,
    trace_path: PathBuf,
    stderr_path: PathBuf,
    _dir: Option<tempfile::TempDir>,
}

impl ProcessRunner {
    /// `binary` overrides `command.program` (the command names the program,
    /// the binary is where it lives on disk).
    pub fn new(
        command: &CommandLine,
        binary: Option<&Path>,
        exec_timeout: Duration,
    ) -> Result<Self, ExecError> {
        let dir = tempfile::Builder::new()
            .prefix("dirfuzz-exec-")
            .tempdir()
            .map_err(|e| ExecError::Io {
                path: "tempdir".into(),
                reason: e.to_string(),
            })?;
        let mut r = Self::in_dir(command, binary, exec_timeout, dir.path())?;
        r._dir = Some(dir);
        Ok(r)
    }

    pub fn in_dir(
        command: &CommandLine,
        binary: Option<&Path>,
        exec_timeout: Duration,
        dir: &Path,
    ) -> Result<Self, ExecError> {
        std::fs::create_dir_all(dir).map_err(|e| ExecError::Io {
            path: dir.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            program: binary
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(&command.program)),
            args: command.args.clone(),
            exec_timeout,
            input_path: dir.join("cur_input"),
            trace_path: dir.join("trace.txt"),
            stderr_path: dir.join("stderr.txt"),
            _dir: None,
        })
    }

    pub fn exec_timeout(&self) -> Duration {
        self.exec_timeout
    }

    fn io(path: &Path, e: std::io::Error) -> ExecError {
        ExecError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }
}

impl Runner for ProcessRunner {
    fn run(&mut self, input: &[u8]) -> Result<ExecResult, ExecError> {
        std::fs::write(&self.input_path, input).map_err(|e| Self::io(&self.input_path, e))?;
        File::create(&self.trace_path).map_err(|e| Self::io(&self.trace_path, e))?;
        let stderr = File::create(&self.stderr_path).map_err(|e| Self::io(&self.stderr_path, e))?;
        let input_arg = self.input_path.to_string_lossy().into_owned();
        let args = self.args.iter().map(|a| {
            if a == "@@" {
                input_arg.clone()
            } else {
                a.clone()
            }
        });
        let started = Instant::now();
        let mut child = Command::new(&self.program)
            .args(args)
            .env(TRACE_ENV, &self.trace_path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr)
            .spawn()
            .map_err(|e| ExecError::Spawn {
                program: self.program.display().to_string(),
                reason: e.to_string(),
            })?;
        let status = child
            .wait_timeout(self.exec_timeout)
            .map_err(|e| Self::io(&self.program, e))?;
        let exit = match status {
            None => {
                let _ = child.kill();
                let _ = child.wait();
                ExitKind::Timeout
            }
            Some(st) => match st.signal() {
                Some(sig) => ExitKind::Crash {
                    class: signal_name(sig),
                },
                None => ExitKind::Clean { code: st.code() },
            },
        };
        let duration = started.elapsed();
        let (trace, trace_missing) = match std::fs::read(&self.trace_path) {
            Ok(bytes) => (
                String::from_utf8_lossy(&bytes)
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect(),
                false,
            ),
            Err(e) => {
                log::warn!("trace file unreadable: {e}");
                (Vec::new(), true)
            }
        };
        let mut excerpt = String::new();
        if let Ok(f) = File::open(&self.stderr_path) {
            let mut buf = Vec::new();
            let _ = f.take(STDERR_EXCERPT).read_to_end(&mut buf);
            excerpt = String::from_utf8_lossy(&buf).into_owned();
        }
        Ok(ExecResult {
            exit,
            trace,
            duration,
            stderr_excerpt: excerpt,
            trace_missing,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> CommandLine {
        CommandLine::new("sh", vec!["-c".into(), script.into(), "@@".into()], "test").unwrap()
    }

    #[test]
    fn clean_exit_with_trace() {
        let cmd =
            sh(r#"echo main >> "$RF_TRACE_FILE"; echo "$(head -c 3 "$0")" >> "$RF_TRACE_FILE""#);
        let mut r = ProcessRunner::new(&cmd, None, Duration::from_secs(5)).unwrap();
        let res = r.run(b"abcdef").unwrap();
        assert_eq!(res.exit, ExitKind::Clean { code: Some(0) });
        assert_eq!(res.trace, ["main", "abc"]);
    }

    #[test]
    fn crash_is_classified() {
        let cmd = sh(r#"echo f >> "$RF_TRACE_FILE"; echo boom >&2; kill -SEGV $$"#);
        let mut r = ProcessRunner::new(&cmd, None, Duration::from_secs(5)).unwrap();
        let res = r.run(b"x").unwrap();
        assert_eq!(
            res.exit,
            ExitKind::Crash {
                class: "SIGSEGV".into()
            }
        );
        assert_eq!(res.trace, ["f"]);
        assert!(res.stderr_excerpt.contains("boom"));
    }

    #[test]
    fn sleeping_target_times_out() {
        let cmd = sh("sleep 5");
        let mut r = ProcessRunner::new(&cmd, None, Duration::from_millis(50)).unwrap();
        let started = Instant::now();
        let res = r.run(b"x").unwrap();
        assert_eq!(res.exit, ExitKind::Timeout);
        assert!(started.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn missing_program_is_spawn_error() {
        let cmd = CommandLine::new("/nonexistent/prog", vec!["@@".into()], "").unwrap();
        let mut r = ProcessRunner::new(&cmd, None, Duration::from_secs(1)).unwrap();
        assert!(matches!(r.run(b"x"), Err(ExecError::Spawn { .. })));
    }

    #[test]
    fn trace_reset_between_runs() {
        let cmd = sh(r#"cat "$0" >> "$RF_TRACE_FILE""#);
        let mut r = ProcessRunner::new(&cmd, None, Duration::from_secs(5)).unwrap();
        assert_eq!(r.run(b"one\n").unwrap().trace, ["one"]);
        assert_eq!(r.run(b"two\n").unwrap().trace, ["two"]);
    }
}
