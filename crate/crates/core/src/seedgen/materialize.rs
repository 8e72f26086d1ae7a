//! Turning generator specs into input bytes.

use std::fs::File;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use wait_timeout::ChildExt;

use super::{generator_field, GeneratorKind, GeneratorSpec, SeedError};
use crate::llm::GENERATION_TEMPERATURE;
use crate::query::{repair_note, Fillers, QueryEngine, TaskOptions};

pub const MAX_GENERATOR_REPAIRS: usize = 3;
const STDERR_LIMIT: usize = 4096;

/// Limits for generator scripts.
#[derive(Debug, Clone)]
pub struct Sandbox {
    pub cpu_limit_secs: u64,
    pub wall_timeout: Duration,
    pub max_output: u64,
}

impl Default for Sandbox {
    fn default() -> Self {
        Self {
            cpu_limit_secs: 10,
            wall_timeout: Duration::from_secs(20),
            max_output: 64 << 20,
        }
    }
}

/// Decodes `\n`, `\t`, `\r`, `\0`, `\\`, `\"`, `\'` and `\xNN`.
pub fn decode_c_escapes(text: &str) -> Result<Vec<u8>, SeedError> {
    let mut out = Vec::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('n') => out.push(b'\n'),
            Some('t') => out.push(b'\t'),
            Some('r') => out.push(b'\r'),
            Some('0') => out.push(0),
            Some('\\') => out.push(b'\\'),
            Some('"') => out.push(b'"'),
            Some('\'') => out.push(b'\''),
            Some('x') => {
                let hi = chars.next();
                let lo = chars.next();
                let digits: String = [hi, lo].into_iter().flatten().collect();
                let v = u8::from_str_radix(&digits, 16)
                    .ok()
                    .filter(|_| digits.len() == 2)
                    .ok_or_else(|| {
                        SeedError::InvalidGenerator(format!("bad escape \\x{digits}"))
                    })?;
                out.push(v);
            }
            Some(other) => {
                return Err(SeedError::InvalidGenerator(format!(
                    "unknown escape \\{other}"
                )));
            }
            None => return Err(SeedError::InvalidGenerator("trailing backslash".into())),
        }
    }
    Ok(out)
}

pub(crate) fn decode_literal(encoding: &str, payload: &str) -> Result<Vec<u8>, SeedError> {
    match encoding {
        "text" => decode_c_escapes(payload),
        "hex" => {
            let digits: String = payload.chars().filter(|c| !c.is_whitespace()).collect();
            hex::decode(digits)
                .map_err(|e| SeedError::InvalidGenerator(format!("bad hex payload: {e}")))
        }
        other => Err(SeedError::InvalidGenerator(format!(
            "unknown encoding {other:?}"
        ))),
    }
}

fn run_script(runtime: &str, script: &str, sandbox: &Sandbox) -> Result<Vec<u8>, SeedError> {
    let io = |e: std::io::Error| SeedError::Io(e.to_string());
    let dir = tempfile::Builder::new()
        .prefix("dirfuzz-gen-")
        .tempdir()
        .map_err(io)?;
    let script_path = dir
        .path()
        .join(if runtime == "sh" { "gen.sh" } else { "gen.py" });
    std::fs::write(&script_path, script).map_err(io)?;
    let out_path = dir.path().join("out.bin");
    let err_path = dir.path().join("err.txt");
    let cpu = sandbox.cpu_limit_secs;
    let fsize = sandbox.max_output;
    let mut cmd = Command::new(runtime);
    cmd.arg(&script_path)
        .current_dir(dir.path())
        .env_remove(crate::campaign::exec::TRACE_ENV)
        .stdin(Stdio::null())
        .stdout(File::create(&out_path).map_err(io)?)
        .stderr(File::create(&err_path).map_err(io)?);
    unsafe {
        cmd.pre_exec(move || {
            let lim = libc::rlimit {
                rlim_cur: cpu,
                rlim_max: cpu,
            };
            libc::setrlimit(libc::RLIMIT_CPU, &lim);
            let lim = libc::rlimit {
                rlim_cur: fsize,
                rlim_max: fsize,
            };
            libc::setrlimit(libc::RLIMIT_FSIZE, &lim);
            // Best effort: drop network access when user namespaces are allowed.
            libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET);
            Ok(())
        });
    }
    let mut child = cmd
        .spawn()
        .map_err(|e| SeedError::GeneratorFailed(format!("cannot start {runtime}: {e}")))?;
    let status = child.wait_timeout(sandbox.wall_timeout).map_err(io)?;
    let status = match status {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(SeedError::GeneratorFailed(format!(
                "script exceeded {}s wall-clock limit",
                sandbox.wall_timeout.as_secs()
            )));
        }
    };
    if !status.success() {
        let err = std::fs::read(&err_path).unwrap_or_default();
        let tail = &err[err.len().saturating_sub(STDERR_LIMIT)..];
        return Err(SeedError::GeneratorFailed(format!(
            "script exited with {status}:\n{}",
            String::from_utf8_lossy(tail).trim_end()
        )));
    }
    std::fs::read(&out_path).map_err(io)
}

/// Produces the bytes described by `spec`.
pub fn materialize(spec: &GeneratorSpec, sandbox: &Sandbox) -> Result<Vec<u8>, SeedError> {
    let bytes = match &spec.kind {
        GeneratorKind::LiteralBytes { encoding } => decode_literal(encoding, &spec.payload)?,
        GeneratorKind::Script { runtime } => {
            spec.validate()?;
            run_script(runtime, &spec.payload, sandbox)?
        }
    };
    if bytes.is_empty() {
        return Err(SeedError::EmptyOutput);
    }
    Ok(bytes)
}

/// Materializes `spec`; on failure the originating task is asked again with
/// the error attached, up to [`MAX_GENERATOR_REPAIRS`] times.
pub fn materialize_with_repair(
    spec: &GeneratorSpec,
    task_id: &str,
    fillers: &Fillers,
    field: &str,
    engine: &QueryEngine,
    sandbox: &Sandbox,
    stage: &str,
) -> Result<(Vec<u8>, GeneratorSpec), SeedError> {
    let mut current = spec.clone();
    let mut round = 0;
    loop {
        let err = match materialize(&current, sandbox) {
            Ok(bytes) => return Ok((bytes, current)),
            Err(
                e @ (SeedError::GeneratorFailed(_)
                | SeedError::EmptyOutput
                | SeedError::InvalidGenerator(_)),
            ) => e,
            Err(e) => return Err(e),
        };
        if round == MAX_GENERATOR_REPAIRS {
            return Err(SeedError::RepairsExhausted {
                rounds: round,
                last_error: err.to_string(),
            });
        }
        round += 1;
        log::info!("{task_id}: generator failed, repair round {round}: {err}");
        let previous = format!("```{}\n{}\n```", current.lang(), current.payload.trim_end());
        let note = repair_note(round, MAX_GENERATOR_REPAIRS, &err.to_string(), &previous);
        current = engine.execute_noted(
            task_id,
            fillers,
            &[note],
            &TaskOptions::stage(stage).temperature(GENERATION_TEMPERATURE),
            |a| {
                generator_field(a, field)
                    .unwrap_or(Err(SeedError::EmptyOutput))
                    .map_err(|e| e.to_string())
            },
        )?;
    }
}

/// Writes bytes to `path`, creating parent directories.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), SeedError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| SeedError::Io(e.to_string()))?;
    }
    std::fs::write(path, bytes).map_err(|e| SeedError::Io(format!("{}: {e}", path.display())))
}
