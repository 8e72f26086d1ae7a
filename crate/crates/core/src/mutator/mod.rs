//! Bug-specific mutation programs: analysis, strategies, synthesis, trial
//! and regeneration.

pub mod dsl;
pub mod trial;

pub use dsl::{DslError, Expr, Mutated, MutationProgram, Op, Pos, DSL_REFERENCE};
pub use trial::{
    refresh_due, trial_run, TrialReport, TrialThresholds, Verdict, DEFAULT_REFRESH_PERIOD,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{BugInfo, FunctionSummary};
use crate::llm::GENERATION_TEMPERATURE;
use crate::query::{
    parse, repair_note, run_with_repairs, Fillers, QueryEngine, TaskError, TaskOptions,
};

pub const MAX_REGENERATIONS: usize = 3;

#[derive(Debug, Error)]
pub enum MutatorError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugAnalysis {
    pub cause: String,
    pub trigger_conditions: Vec<String>,
    /// (input region, role)
    pub relevant_fields: Vec<(String, String)>,
}

impl BugAnalysis {
    pub fn describe(&self) -> String {
        let mut s = format!("cause: {}\ntrigger conditions:\n", self.cause);
        for t in &self.trigger_conditions {
            s.push_str(&format!("  - {t}\n"));
        }
        if !self.relevant_fields.is_empty() {
            s.push_str("relevant input fields:\n");
            for (r, role) in &self.relevant_fields {
                s.push_str(&format!("  {r} | {role}\n"));
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationStrategy {
    pub description: String,
    pub rationale: String,
}

fn split_pair(line: &str) -> (String, String) {
    match line.split_once('|') {
        Some((a, b)) => (a.trim().to_string(), b.trim().to_string()),
        None => (line.trim().to_string(), String::new()),
    }
}

fn describe_strategies(s: &[MutationStrategy]) -> String {
    if s.is_empty() {
        return "(none)".into();
    }
    s.iter()
        .enumerate()
        .map(|(i, m)| format!("S{}: {} | {}\n", i + 1, m.description, m.rationale))
        .collect()
}

pub fn analyze_bug(
    bug_info: &BugInfo,
    target_summary: &FunctionSummary,
    engine: &QueryEngine,
) -> Result<BugAnalysis, MutatorError> {
    let fillers = Fillers::new()
        .with_prior("bug_info", bug_info.describe())
        .with_prior("target_summary", target_summary.describe());
    let a = engine.execute_validated(
        "bug_analysis",
        &fillers,
        &TaskOptions::stage("Mutator"),
        |a| match a.text("cause") {
            Some(c) if !c.trim().is_empty() => Ok(a.clone()),
            _ => Err("CAUSE must not be empty".to_string()),
        },
    )?;
    Ok(BugAnalysis {
        cause: a.text("cause").unwrap_or_default().trim().to_string(),
        trigger_conditions: a.lines("trigger_conditions").to_vec(),
        relevant_fields: a
            .lines("relevant_fields")
            .iter()
            .map(|l| split_pair(l))
            .collect(),
    })
}

/// Exemplar strategies attached to every proposal prompt.
pub const EXEMPLAR_STRATEGIES: &str = "\
- Set a declared element count to a value larger than the data that follows | length checks that trust the header overflow the buffer
- Replace a section offset with an offset pointing past the end of the file | readers that skip bounds checks dereference invalid memory
- Remove a mandatory section while keeping references to it | code that assumes presence dereferences NULL
";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub strategies: Vec<MutationStrategy>,
    /// The model repeated the prior strategies even after a repair request.
    pub duplicate: bool,
}

fn norm(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn propose_strategies(
    analysis: &BugAnalysis,
    engine: &QueryEngine,
    prior: Option<&[MutationStrategy]>,
) -> Result<Proposal, MutatorError> {
    let prior = prior.unwrap_or(&[]);
    let fillers = Fillers::new()
        .with_prior("analysis", analysis.describe())
        .with("examples", EXEMPLAR_STRATEGIES)
        .with_prior("prior_strategies", describe_strategies(prior));
    let seen: Vec<String> = prior.iter().map(|s| norm(&s.description)).collect();
    let to_strategies = |lines: &[String]| -> Vec<MutationStrategy> {
        lines
            .iter()
            .map(|l| split_pair(l))
            .filter(|(d, _)| !d.is_empty())
            .map(|(description, rationale)| MutationStrategy {
                description,
                rationale,
            })
            .collect()
    };
    let opts = TaskOptions::stage("Mutator")
        .temperature(GENERATION_TEMPERATURE)
        .max_repairs(if prior.is_empty() { 3 } else { 1 });
    let result = engine.execute_validated("strategy_proposal", &fillers, &opts, |a| {
        let s = to_strategies(a.lines("strategies"));
        if s.is_empty() {
            return Err("no strategies listed".into());
        }
        if !seen.is_empty() && s.iter().all(|m| seen.contains(&norm(&m.description))) {
            return Err(
                "all strategies repeat the prior strategies; propose different ones".into(),
            );
        }
        Ok(s)
    });
    match result {
        Ok(strategies) => Ok(Proposal {
            strategies,
            duplicate: false,
        }),
        Err(TaskError::RepairsExhausted { responses, .. }) if !prior.is_empty() => {
            let template = engine.template("strategy_proposal")?;
            let last = responses.last().map(String::as_str).unwrap_or_default();
            let strategies = parse(&template.answer_schema, last)
                .map(|a| to_strategies(a.lines("strategies")))
                .unwrap_or_default();
            if strategies.is_empty() {
                return Err(TaskError::RepairsExhausted {
                    task_id: "strategy_proposal".into(),
                    responses,
                    last_error: "no strategies listed".into(),
                }
                .into());
            }
            log::warn!("strategy refresh returned only prior strategies");
            Ok(Proposal {
                strategies,
                duplicate: true,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn parse_refs(text: &str, n: usize) -> Vec<usize> {
    let mut refs: Vec<usize> = text
        .split(|c: char| !c.is_ascii_digit())
        .filter_map(|t| t.parse::<usize>().ok())
        .filter(|&i| i >= 1 && i <= n)
        .map(|i| i - 1)
        .collect();
    refs.dedup();
    refs
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Asks for a program implementing `strategies`; parse failures are sent
/// back through the repair task. `rejection` describes an earlier program
/// that failed its trial.
pub fn synthesize(
    strategies: &[MutationStrategy],
    engine: &QueryEngine,
    rejection: Option<&str>,
) -> Result<MutationProgram, MutatorError> {
    let strat_text = describe_strategies(strategies);
    let synth = engine.template("mutator_synthesis")?;
    let repair = engine.template("mutator_repair")?;
    let fillers = Fillers::new()
        .with_prior("strategies", strat_text.clone())
        .with("dsl_reference", DSL_REFERENCE)
        .with_prior("rejection", rejection.unwrap_or("(none)"));
    let opts = TaskOptions::stage("Mutator").temperature(GENERATION_TEMPERATURE);
    let first = synth.render(&fillers).map_err(TaskError::from)?;
    let max = opts.max_repairs;
    let program = run_with_repairs(
        &engine.client,
        "mutator_synthesis",
        first,
        &opts,
        |round, raw, err| {
            let previous = parse(&synth.answer_schema, raw)
                .ok()
                .and_then(|a| a.code("program").map(|(_, b)| b.to_string()))
                .unwrap_or_else(|| raw.to_string());
            let f = Fillers::new()
                .with_prior("strategies", strat_text.clone())
                .with("dsl_reference", DSL_REFERENCE)
                .with("program", previous)
                .with("error", err);
            Ok(repair.render_with(&f, &[repair_note(round, max, err, raw)])?)
        },
        |raw| {
            let a = parse(&synth.answer_schema, raw).map_err(|e| e.to_string())?;
            let (_, body) = a.code("program").ok_or("PROGRAM block missing")?;
            let mut p = MutationProgram::parse(body).map_err(|e| format!("parse error at {e}"))?;
            p.strategy_refs = parse_refs(
                a.text("strategy_refs").unwrap_or_default(),
                strategies.len(),
            );
            p.created_at = unix_now();
            Ok(p)
        },
    )?;
    Ok(program)
}

/// One synthesized program and its trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub program: String,
    pub report: Option<TrialReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutatorOutcome {
    /// The accepted program, or `None` for random-only fallback.
    pub program: Option<MutationProgram>,
    pub report: Option<TrialReport>,
    pub attempts: Vec<Attempt>,
    pub regenerations: usize,
}

/// Synthesizes and trials programs until one is accepted, regenerating at
/// most [`MAX_REGENERATIONS`] times before falling back to random-only.
pub fn synthesize_accepted(
    strategies: &[MutationStrategy],
    engine: &QueryEngine,
    mut trial: impl FnMut(&MutationProgram) -> TrialReport,
) -> MutatorOutcome {
    let mut attempts: Vec<Attempt> = Vec::new();
    let mut rejection: Option<String> = None;
    let mut regenerations = 0;
    loop {
        match synthesize(strategies, engine, rejection.as_deref()) {
            Ok(p) => {
                let report = trial(&p);
                let text = p.to_text();
                log::info!("mutator trial: {}", report.summary());
                attempts.push(Attempt {
                    program: text.clone(),
                    report: Some(report.clone()),
                    error: None,
                });
                if report.verdict == Verdict::Accepted {
                    return MutatorOutcome {
                        program: Some(p),
                        report: Some(report),
                        attempts,
                        regenerations,
                    };
                }
                rejection = Some(format!(
                    "The previous program was rejected by the trial run: {}.\n```\n{}```",
                    report.summary(),
                    text
                ));
            }
            Err(e) => {
                log::warn!("mutator synthesis failed: {e}");
                attempts.push(Attempt {
                    program: String::new(),
                    report: None,
                    error: Some(e.to_string()),
                });
                if matches!(e, MutatorError::Task(TaskError::Llm(_))) {
                    break;
                }
                rejection = Some(format!("The previous synthesis failed: {e}"));
            }
        }
        if regenerations == MAX_REGENERATIONS {
            break;
        }
        regenerations += 1;
    }
    log::warn!("no mutation program accepted; falling back to random-only mutation");
    MutatorOutcome {
        program: None,
        report: None,
        attempts,
        regenerations,
    }
}

/// Writes `<name>.dsl` and `<name>.trial.json` into `dir`.
pub fn save_program(
    dir: &Path,
    name: &str,
    program: &MutationProgram,
    report: Option<&TrialReport>,
) -> Result<(), MutatorError> {
    let io = |e: std::io::Error| MutatorError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(format!("{name}.dsl")), program.to_text()).map_err(io)?;
    let meta = serde_json::json!({
        "strategy_refs": program.strategy_refs,
        "created_at": program.created_at,
        "trial": report,
    });
    std::fs::write(
        dir.join(format!("{name}.trial.json")),
        serde_json::to_string_pretty(&meta).unwrap_or_default(),
    )
    .map_err(io)
}
