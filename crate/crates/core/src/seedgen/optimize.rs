//! Seed optimization toward the target function.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::materialize::{materialize, write_bytes, Sandbox};
use super::{generator_field, GeneratorSpec, ProvenanceStep, Seed, SeedError};
use crate::callgraph::{CallGraph, Fcc, FunctionId, GraphError, TraceObservation};
use crate::campaign::exec::{ExecResult, Runner};
use crate::knowledge::{ProgramUsage, SummaryCache};
use crate::llm::GENERATION_TEMPERATURE;
use crate::query::{Fillers, QueryEngine, StructuredAnswer, TaskOptions};

pub const MAX_CANDIDATES: usize = 4;
pub const MAX_KEPT_SEEDS: usize = 8;
pub const INPUT_DUMP_LIMIT: usize = 4096;
/// Traces are function-level; the line-annotation slot is left empty.
const LINE_NOTES_ABSENT: &str = "(no line annotations recorded)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptStatus {
    Reached,
    Partial,
    IsolatedTarget,
    Timeout,
}

impl OptStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            OptStatus::Reached => "reached",
            OptStatus::Partial => "partial",
            OptStatus::IsolatedTarget => "isolated-target",
            OptStatus::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptSeed {
    /// Call distance from the closest reached function to the target.
    pub level: usize,
    pub seed: Seed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub status: OptStatus,
    pub best_seed: Seed,
    /// Smallest seed per distance level, lowest levels first.
    pub candidates: Vec<KeptSeed>,
    pub iterations: usize,
    pub final_trace: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct OptBudget {
    pub wall: Duration,
    pub max_iterations: Option<usize>,
}

impl OptBudget {
    pub fn wall(wall: Duration) -> Self {
        Self {
            wall,
            max_iterations: None,
        }
    }
}

/// Everything the optimizer reads besides the seed and runner.
pub struct OptContext<'a> {
    pub graph: &'a CallGraph,
    pub engine: &'a QueryEngine,
    /// Function name → definition text.
    pub definitions: &'a BTreeMap<String, String>,
    pub summaries: &'a SummaryCache,
    pub usage: Option<&'a ProgramUsage>,
    pub sandbox: Sandbox,
}

/// Hex and printable dump, truncated after `limit` bytes.
pub fn hex_dump(bytes: &[u8], limit: usize) -> String {
    let mut s = String::new();
    for (i, row) in bytes[..bytes.len().min(limit)].chunks(16).enumerate() {
        let hex: Vec<String> = row.iter().map(|b| format!("{b:02x}")).collect();
        let text: String = row
            .iter()
            .map(|&b| {
                if (0x20..0x7f).contains(&b) {
                    b as char
                } else {
                    '.'
                }
            })
            .collect();
        s.push_str(&format!(
            "{:08x}  {:<47}  |{}|\n",
            i * 16,
            hex.join(" "),
            text
        ));
    }
    if bytes.len() > limit {
        s.push_str(&format!("... {} more bytes\n", bytes.len() - limit));
    }
    s.push_str(&format!("({} bytes total)", bytes.len()));
    s
}

struct Loop<'c, 'a> {
    ctx: &'c OptContext<'a>,
    deadline: Instant,
    max_iterations: Option<usize>,
    iterations: usize,
    dist: BTreeMap<FunctionId, usize>,
    kept: BTreeMap<usize, Seed>,
}

enum Step {
    Done(OptStatus),
    Continue,
}

impl<'c, 'a> Loop<'c, 'a> {
    fn new(ctx: &'c OptContext<'a>, target: &FunctionId, budget: &OptBudget) -> Self {
        Self {
            ctx,
            deadline: Instant::now() + budget.wall,
            max_iterations: budget.max_iterations,
            iterations: 0,
            dist: ctx.graph.distances_to(target),
            kept: BTreeMap::new(),
        }
    }

    fn expired(&self) -> bool {
        Instant::now() >= self.deadline || self.max_iterations.is_some_and(|m| self.iterations >= m)
    }

    fn observe(&self, r: &ExecResult) -> TraceObservation {
        self.ctx.graph.observe(&r.trace)
    }

    fn level(&self, obs: &TraceObservation) -> Option<usize> {
        obs.reached
            .iter()
            .filter_map(|f| self.dist.get(f).copied())
            .min()
    }

    fn keep(&mut self, obs: &TraceObservation, seed: &Seed) {
        let Some(level) = self.level(obs) else { return };
        let smaller = self
            .kept
            .get(&level)
            .is_none_or(|s| seed.bytes.len() < s.bytes.len());
        if smaller {
            self.kept.insert(level, seed.clone());
        }
    }

    fn outcome(
        self,
        status: OptStatus,
        best: Seed,
        final_trace: Vec<String>,
    ) -> OptimizationOutcome {
        let candidates = self
            .kept
            .into_iter()
            .take(MAX_KEPT_SEEDS)
            .map(|(level, seed)| KeptSeed { level, seed })
            .collect();
        OptimizationOutcome {
            status,
            best_seed: best,
            candidates,
            iterations: self.iterations,
            final_trace,
        }
    }

    fn name(&self, id: &FunctionId) -> String {
        self.ctx.graph.name(id).to_string()
    }

    fn definition(&self, id: &FunctionId) -> String {
        self.ctx
            .definitions
            .get(self.ctx.graph.name(id))
            .cloned()
            .unwrap_or_else(|| "(definition unavailable)".into())
    }

    fn ask_candidates(
        &self,
        task_id: &str,
        fillers: &Fillers,
    ) -> Result<Vec<Result<GeneratorSpec, String>>, SeedError> {
        let opts = TaskOptions::stage("Opt").temperature(GENERATION_TEMPERATURE);
        let specs = self.ctx.engine.execute_validated(
            task_id,
            fillers,
            &opts,
            |a: &StructuredAnswer| {
                let specs: Vec<Result<GeneratorSpec, String>> = (1..=MAX_CANDIDATES)
                    .filter_map(|i| generator_field(a, &format!("candidate_{i}")))
                    .map(|r| r.map_err(|e| e.to_string()))
                    .collect();
                if specs.iter().any(Result::is_ok) {
                    Ok(specs)
                } else {
                    let why: Vec<String> = specs.into_iter().filter_map(Result::err).collect();
                    Err(format!("no usable candidate input: {}", why.join("; ")))
                }
            },
        )?;
        Ok(specs)
    }

    /// One FCC iteration. Replaces `current` when a candidate makes progress.
    fn fcc_step(
        &mut self,
        fcc: &Fcc,
        current: &mut Seed,
        result: &mut ExecResult,
        runner: &mut dyn Runner,
    ) -> Result<Step, SeedError> {
        let obs = self.observe(result);
        self.keep(&obs, current);
        if obs.contains(fcc.target()) {
            return Ok(Step::Done(OptStatus::Reached));
        }
        let dev = match self.ctx.graph.deviation(fcc, &obs) {
            Ok(Some(d)) => d,
            Ok(None) => return Ok(Step::Done(OptStatus::Reached)),
            Err(GraphError::EmptyTrace | GraphError::DisjointTrace) => {
                return Err(SeedError::InconsistentTrace(result.trace.join(", ")))
            }
            Err(e) => return Err(e.into()),
        };
        if self.expired() {
            return Ok(Step::Done(OptStatus::Timeout));
        }
        self.iterations += 1;
        let iteration = self.iterations;
        let goal = self.name(&dev.next_goal);
        let fillers = Fillers::new()
            .with_prior("command", current.command.to_string())
            .with("target_function", self.name(fcc.target()))
            .with("deviation_function", self.name(&dev.function))
            .with_prior("deviation_definition", self.definition(&dev.function))
            .with_prior("trace", result.trace.join(" -> "))
            .with("trace_lines", LINE_NOTES_ABSENT)
            .with("next_goal", goal.clone())
            .with_prior("next_goal_definition", self.definition(&dev.next_goal))
            .with("current_input", hex_dump(&current.bytes, INPUT_DUMP_LIMIT));
        let specs = self.ask_candidates("fcc_step", &fillers)?;
        let mut provenance = current.provenance.clone();
        for (i, spec) in specs.into_iter().enumerate() {
            if Instant::now() >= self.deadline {
                break;
            }
            let mut step = ProvenanceStep {
                iteration,
                task_id: "fcc_step".into(),
                goal: goal.clone(),
                candidate: i + 1,
                accepted: false,
                detail: String::new(),
            };
            let bytes = match spec
                .map_err(SeedError::InvalidGenerator)
                .and_then(|s| materialize(&s, &self.ctx.sandbox))
            {
                Ok(b) => b,
                Err(e) => {
                    step.detail = e.to_string();
                    provenance.push(step);
                    continue;
                }
            };
            let r = runner.run(&bytes)?;
            let cobs = self.observe(&r);
            let mut cand = Seed {
                bytes,
                command: current.command.clone(),
                provenance: Vec::new(),
            };
            self.keep(&cobs, &cand);
            let progress = if cobs.contains(fcc.target()) {
                Some(0)
            } else {
                match self.ctx.graph.deviation(fcc, &cobs) {
                    Ok(Some(d)) if d.distance < dev.distance => Some(d.distance),
                    _ => None,
                }
            };
            match progress {
                Some(d) => {
                    step.accepted = true;
                    step.detail = format!("distance {} -> {d}", dev.distance);
                    provenance.push(step);
                    cand.provenance = provenance;
                    *current = cand;
                    *result = r;
                    return Ok(Step::Continue);
                }
                None => {
                    step.detail = format!("trace: {}", r.trace.join(" -> "));
                    provenance.push(step);
                }
            }
        }
        current.provenance = provenance;
        Ok(Step::Continue)
    }

    fn along_fcc(
        &mut self,
        fcc: &Fcc,
        mut current: Seed,
        mut result: ExecResult,
        runner: &mut dyn Runner,
    ) -> Result<(OptStatus, Seed, ExecResult), SeedError> {
        loop {
            if let Step::Done(status) = self.fcc_step(fcc, &mut current, &mut result, runner)? {
                return Ok((status, current, result));
            }
        }
    }
}

/// Iteratively rewrites `seed` until its trace contains the chain's target
/// or the budget runs out.
pub fn optimize_along_fcc(
    seed: Seed,
    fcc: &Fcc,
    ctx: &OptContext,
    runner: &mut dyn Runner,
    budget: &OptBudget,
) -> Result<OptimizationOutcome, SeedError> {
    let mut lp = Loop::new(ctx, fcc.target(), budget);
    let result = runner.run(&seed.bytes)?;
    let (status, best, result) = lp.along_fcc(fcc, seed, result, runner)?;
    Ok(lp.outcome(status, best, result.trace))
}

/// Approaches the target through its direct callers when no complete chain
/// exists. Neighbors are tried in an order drawn from `rng_seed`.
pub fn optimize_by_functionality(
    seed: Seed,
    target: &FunctionId,
    ctx: &OptContext,
    runner: &mut dyn Runner,
    budget: &OptBudget,
    rng_seed: u64,
) -> Result<OptimizationOutcome, SeedError> {
    let g = ctx.graph;
    let mut neighbors = g.neighbors(target)?;
    let mut lp = Loop::new(ctx, target, budget);
    if neighbors.is_empty() {
        return Ok(lp.outcome(OptStatus::IsolatedTarget, seed, Vec::new()));
    }
    neighbors.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut current = seed;
    let mut result = runner.run(&current.bytes)?;
    let target_name = g.name(target).to_string();
    for n in &neighbors {
        let obs = lp.observe(&result);
        lp.keep(&obs, &current);
        if obs.contains(target) {
            return Ok(lp.outcome(OptStatus::Reached, current, result.trace));
        }
        if lp.expired() {
            return Ok(lp.outcome(OptStatus::Timeout, current, result.trace));
        }
        let n_name = g.name(n).to_string();
        let mut reached = obs.contains(n);
        if !reached {
            lp.iterations += 1;
            let iteration = lp.iterations;
            let summary = ctx
                .summaries
                .get(&n_name)
                .map(|s| s.describe())
                .unwrap_or_else(|| lp.definition(n));
            let fillers = Fillers::new()
                .with_prior("command", current.command.to_string())
                .with_prior(
                    "usage",
                    ctx.usage
                        .map(|u| u.describe())
                        .unwrap_or_else(|| "(usage unavailable)".into()),
                )
                .with("neighbor_function", n_name.clone())
                .with_prior("neighbor_summary", summary)
                .with("target_function", target_name.clone())
                .with("current_input", hex_dump(&current.bytes, INPUT_DUMP_LIMIT));
            let specs = lp.ask_candidates("neighbor_input", &fillers)?;
            for (i, spec) in specs.into_iter().enumerate() {
                if Instant::now() >= lp.deadline {
                    break;
                }
                let mut step = ProvenanceStep {
                    iteration,
                    task_id: "neighbor_input".into(),
                    goal: n_name.clone(),
                    candidate: i + 1,
                    accepted: false,
                    detail: String::new(),
                };
                let bytes = match spec
                    .map_err(SeedError::InvalidGenerator)
                    .and_then(|s| materialize(&s, &ctx.sandbox))
                {
                    Ok(b) => b,
                    Err(e) => {
                        step.detail = e.to_string();
                        current.provenance.push(step);
                        continue;
                    }
                };
                let r = runner.run(&bytes)?;
                let cobs = lp.observe(&r);
                let cand = Seed {
                    bytes,
                    command: current.command.clone(),
                    provenance: Vec::new(),
                };
                lp.keep(&cobs, &cand);
                if cobs.contains(n) || cobs.contains(target) {
                    step.accepted = true;
                    step.detail = format!("reached {n_name}");
                    current.provenance.push(step);
                    let provenance = std::mem::take(&mut current.provenance);
                    current = Seed { provenance, ..cand };
                    result = r;
                    reached = true;
                    break;
                }
                step.detail = format!("trace: {}", r.trace.join(" -> "));
                current.provenance.push(step);
            }
        }
        if !reached {
            continue;
        }
        let Some(suffix) = g.shortest_path(n, target)? else {
            continue;
        };
        let (status, best, r) = lp.along_fcc(&suffix, current, result, runner)?;
        current = best;
        result = r;
        if status == OptStatus::Reached || status == OptStatus::Timeout {
            return Ok(lp.outcome(status, current, result.trace));
        }
    }
    let status = if lp.observe(&result).contains(target) {
        OptStatus::Reached
    } else {
        OptStatus::Partial
    };
    Ok(lp.outcome(status, current, result.trace))
}

/// Writes `seed-<level>-<n>.bin` files plus `provenance.jsonl` into `dir`.
pub fn write_seed_set(dir: &Path, outcome: &OptimizationOutcome) -> Result<(), SeedError> {
    let io = |e: std::io::Error| SeedError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut per_level: BTreeMap<usize, usize> = BTreeMap::new();
    for k in &outcome.candidates {
        let n = per_level.entry(k.level).or_default();
        write_bytes(
            &dir.join(format!("seed-{}-{}.bin", k.level, n)),
            &k.seed.bytes,
        )?;
        *n += 1;
    }
    write_bytes(&dir.join("best.bin"), &outcome.best_seed.bytes)?;
    let mut f = std::fs::File::create(dir.join("provenance.jsonl")).map_err(io)?;
    for step in &outcome.best_seed.provenance {
        let line = serde_json::to_string(step).map_err(|e| SeedError::Io(e.to_string()))?;
        writeln!(f, "{line}").map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_format() {
        let d = hex_dump(b"P6\n2 2", 4096);
        assert!(d.starts_with("00000000  50 36 0a 32 20 32"));
        assert!(d.contains("|P6.2 2|"));
        assert!(d.ends_with("(6 bytes total)"));
        let d = hex_dump(&[0u8; 40], 16);
        assert_eq!(d.lines().count(), 3);
        assert!(d.contains("... 24 more bytes"));
    }
}
