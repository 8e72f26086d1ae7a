//! Preliminary seed generation and trace-guided seed optimization.

pub mod materialize;
pub mod optimize;

pub use materialize::{decode_c_escapes, materialize, materialize_with_repair, Sandbox};
pub use optimize::{
    hex_dump, optimize_along_fcc, optimize_by_functionality, write_seed_set, OptBudget, OptContext,
    OptStatus, OptimizationOutcome,
};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::callgraph::GraphError;
use crate::campaign::exec::ExecError;
use crate::knowledge::{BugInfo, FunctionSummary, ProgramUsage};
use crate::llm::GENERATION_TEMPERATURE;
use crate::query::{Fillers, QueryEngine, StructuredAnswer, TaskError, TaskOptions};

pub const INPUT_PLACEHOLDER: &str = "@@";

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("invalid command line: {0}")]
    InvalidCommand(String),
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error("generator failed: {0}")]
    GeneratorFailed(String),
    #[error("generator produced no output")]
    EmptyOutput,
    #[error("generator still failing after {rounds} repair rounds: {last_error}")]
    RepairsExhausted { rounds: usize, last_error: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("trace shares no function with the call chain: [{0}]")]
    InconsistentTrace(String),
    #[error("{0}")]
    Io(String),
}

/// The fixed program invocation; `@@` marks where the input file goes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandLine {
    pub program: String,
    pub args: Vec<String>,
    pub description: String,
}

impl CommandLine {
    pub fn new(
        program: impl Into<String>,
        args: Vec<String>,
        description: impl Into<String>,
    ) -> Result<Self, SeedError> {
        let program = program.into();
        if program.trim().is_empty() {
            return Err(SeedError::InvalidCommand("empty program".into()));
        }
        let holes = args.iter().filter(|a| *a == INPUT_PLACEHOLDER).count();
        if holes != 1 {
            return Err(SeedError::InvalidCommand(format!(
                "expected exactly one `@@` argument, found {holes}"
            )));
        }
        Ok(Self {
            program,
            args,
            description: description.into(),
        })
    }

    /// Splits a shell-style command string.
    pub fn parse(text: &str, description: impl Into<String>) -> Result<Self, SeedError> {
        let words = shlex::split(text.trim().trim_matches('`'))
            .ok_or_else(|| SeedError::InvalidCommand(format!("unbalanced quoting in {text:?}")))?;
        let mut it = words.into_iter();
        let program = it
            .next()
            .ok_or_else(|| SeedError::InvalidCommand("empty command".into()))?;
        Self::new(program, it.collect(), description)
    }

    /// Option tokens among the arguments (`--debug-dump=frames` → `--debug-dump`).
    pub fn flags(&self) -> Vec<String> {
        self.args
            .iter()
            .filter(|a| a.starts_with('-') && a.len() > 1)
            .filter_map(|a| crate::knowledge::flag_token(a))
            .collect()
    }
}

impl fmt::Display for CommandLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let safe = |w: &str| {
            !w.is_empty()
                && w.chars()
                    .all(|c| c.is_ascii_alphanumeric() || "@%+=:,./_-".contains(c))
        };
        let words: Vec<String> = std::iter::once(&self.program)
            .chain(&self.args)
            .map(|w| {
                if safe(w) {
                    w.clone()
                } else {
                    shlex::try_quote(w)
                        .map(|q| q.into_owned())
                        .unwrap_or_else(|_| w.clone())
                }
            })
            .collect();
        f.write_str(&words.join(" "))
    }
}

/// One step in a seed's history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub iteration: usize,
    pub task_id: String,
    pub goal: String,
    pub candidate: usize,
    pub accepted: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub bytes: Vec<u8>,
    pub command: CommandLine,
    pub provenance: Vec<ProvenanceStep>,
}

impl Seed {
    pub fn new(bytes: Vec<u8>, command: CommandLine) -> Self {
        Self {
            bytes,
            command,
            provenance: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Payload is text with C escapes (`text`) or hex digits (`hex`).
    LiteralBytes {
        encoding: String,
    },
    Script {
        runtime: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub payload: String,
}

pub const SCRIPT_RUNTIMES: &[&str] = &["python3", "sh"];

impl GeneratorSpec {
    /// Builds a spec from a fenced block's info string and body.
    pub fn from_fence(lang: &str, body: &str) -> Result<Self, SeedError> {
        let lang = lang.trim().to_ascii_lowercase();
        let kind = match lang.as_str() {
            "" | "text" | "txt" => GeneratorKind::LiteralBytes {
                encoding: "text".into(),
            },
            "hex" => GeneratorKind::LiteralBytes {
                encoding: "hex".into(),
            },
            "python" | "python3" | "py" => GeneratorKind::Script {
                runtime: "python3".into(),
            },
            "sh" | "bash" | "shell" => GeneratorKind::Script {
                runtime: "sh".into(),
            },
            other => {
                return Err(SeedError::InvalidGenerator(format!(
                    "unsupported block language {other:?}; use text, hex, python3 or sh"
                )))
            }
        };
        let spec = Self {
            kind,
            payload: body.to_string(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SeedError> {
        match &self.kind {
            GeneratorKind::LiteralBytes { encoding } => {
                materialize::decode_literal(encoding, &self.payload)?;
            }
            GeneratorKind::Script { runtime } => {
                if !SCRIPT_RUNTIMES.contains(&runtime.as_str()) {
                    return Err(SeedError::InvalidGenerator(format!(
                        "unknown runtime {runtime:?}"
                    )));
                }
                if self.payload.trim().is_empty() {
                    return Err(SeedError::InvalidGenerator("empty script".into()));
                }
            }
        }
        Ok(())
    }

    /// Fence info string for this spec.
    pub fn lang(&self) -> &str {
        match &self.kind {
            GeneratorKind::LiteralBytes { encoding } => encoding,
            GeneratorKind::Script { runtime } => runtime,
        }
    }
}

/// Reads fenced-code field `name` as a generator.
pub(crate) fn generator_field(
    a: &StructuredAnswer,
    name: &str,
) -> Option<Result<GeneratorSpec, SeedError>> {
    a.code(name)
        .map(|(lang, body)| GeneratorSpec::from_fence(lang, body))
}

fn check_grounded(cmd: &CommandLine, usage: &ProgramUsage) -> Result<(), String> {
    let known = usage.flag_tokens();
    let unknown: Vec<String> = cmd
        .flags()
        .into_iter()
        .filter(|f| !known.contains(f))
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(format!(
            "the command uses options not in the usage summary: {}",
            unknown.join(", ")
        ))
    }
}

pub fn select_command(
    bug_info: &BugInfo,
    usage: &ProgramUsage,
    target_summary: &FunctionSummary,
    engine: &QueryEngine,
) -> Result<CommandLine, SeedError> {
    let fillers = Fillers::new()
        .with("program", &bug_info.program)
        .with_prior("bug_info", bug_info.describe())
        .with_prior("usage", usage.describe())
        .with_prior("target_summary", target_summary.describe());
    let cmd = engine.execute_validated(
        "command_selection",
        &fillers,
        &TaskOptions::stage("Opt"),
        |a| {
            let text = a.text("command").unwrap_or_default();
            let cmd = CommandLine::parse(text, a.text("description").unwrap_or_default())
                .map_err(|e| e.to_string())?;
            check_grounded(&cmd, usage)?;
            Ok(cmd)
        },
    )?;
    Ok(cmd)
}

pub fn generate_preliminary(
    command: &CommandLine,
    bug_info: &BugInfo,
    engine: &QueryEngine,
) -> Result<GeneratorSpec, SeedError> {
    let fillers = preliminary_fillers(command, bug_info);
    let spec = engine.execute_validated(
        "preliminary_seed",
        &fillers,
        &TaskOptions::stage("Opt").temperature(GENERATION_TEMPERATURE),
        |a| {
            generator_field(a, "input")
                .unwrap_or(Err(SeedError::EmptyOutput))
                .map_err(|e| e.to_string())
        },
    )?;
    Ok(spec)
}

pub(crate) fn preliminary_fillers(command: &CommandLine, bug_info: &BugInfo) -> Fillers {
    Fillers::new()
        .with_prior("command", command.to_string())
        .with_prior("bug_info", bug_info.describe())
}
