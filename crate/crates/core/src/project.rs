//! Project configuration and the prepare / fuzz / report workflows.
//!
//! Work directory layout:
//!
//! ```text
//! <work_dir>/bundle/    bug_info.json graph_status.json summaries.json index.rfix usage.json
//!                       command.json seeds/ opt.json analysis.json strategies.json
//!                       mutators/ mutator.json stages.json llm_usage.json
//! <work_dir>/campaign/  corpus/ crashes/ mutators/ events.log stats.json report.txt
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::callgraph::{CallGraph, Reachability};
use crate::campaign::{
    self, render_report, CampaignConfig, CampaignStats, MutationSource, ProcessRunner, StageStatus,
    StageTimings,
};
use crate::knowledge::{
    self, build_index, chunk_corpus, derive_program_usage, extract_definition, CommandEmbedder,
    Embedder, HashEmbedder, ProgramUsage, SummaryCache,
};
use crate::llm::{LlmClient, RemoteBackend, RemoteConfig, ScriptedFixture};
use crate::mutator::{self, MutationProgram, MutationStrategy, TrialThresholds};
use crate::query::QueryEngine;
use crate::seedgen::{self, CommandLine, OptBudget, OptContext, OptStatus, Sandbox, Seed};

pub const EXIT_OK: i32 = 0;
pub const EXIT_GENERAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_STAGE_FAILURE: i32 = 3;
pub const EXIT_ISOLATED_TARGET: i32 = 4;
pub const EXIT_TIMEOUT: i32 = 5;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("config: {0}")]
    Config(String),
    #[error("bundle already exists at {0}; pass --force to rebuild it")]
    BundleExists(PathBuf),
    #[error("missing artifact {0}")]
    Missing(PathBuf),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("target function {0} has no call chain from the entry and no callers")]
    IsolatedTarget(String),
    #[error("{0}")]
    Io(String),
}

impl ProjectError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ProjectError::Stage { .. } => EXIT_STAGE_FAILURE,
            ProjectError::IsolatedTarget(_) => EXIT_ISOLATED_TARGET,
            _ => EXIT_GENERAL,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ProjectError {
    ProjectError::Io(format!("{}: {e}", path.display()))
}

fn dur(s: &str) -> Result<Duration, ProjectError> {
    humantime::parse_duration(s.trim())
        .map_err(|e| ProjectError::Config(format!("bad duration {s:?}: {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBudgets {
    opt: Option<String>,
    trial: Option<String>,
    campaign: Option<String>,
    refresh: Option<String>,
    exec_timeout: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    corpus_roots: Vec<PathBuf>,
    graph_file: PathBuf,
    bug_report_file: PathBuf,
    target_binary: Option<PathBuf>,
    work_dir: PathBuf,
    fixture: Option<PathBuf>,
    llm_backend: Option<String>,
    embedder_command: Option<Vec<String>>,
    embedder_dim: Option<usize>,
    chunk_chars: Option<usize>,
    overlap_chars: Option<usize>,
    top_k: Option<usize>,
    rng_seed: Option<u64>,
    budgets: Option<RawBudgets>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Scripted(PathBuf),
    Remote,
}

#[derive(Debug, Clone)]
pub struct Budgets {
    pub opt: Duration,
    pub trial: Duration,
    pub campaign: Duration,
    /// Zero disables mutator refresh.
    pub refresh: Duration,
    pub exec_timeout: Duration,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            opt: Duration::from_secs(3600),
            trial: Duration::from_secs(5),
            campaign: Duration::from_secs(24 * 3600),
            refresh: mutator::DEFAULT_REFRESH_PERIOD,
            exec_timeout: campaign::DEFAULT_EXEC_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectConfig {
    pub corpus_roots: Vec<PathBuf>,
    pub graph_file: PathBuf,
    pub bug_report_file: PathBuf,
    pub target_binary: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub backend: Backend,
    pub embedder_command: Option<Vec<String>>,
    pub embedder_dim: usize,
    pub chunk_chars: usize,
    pub overlap_chars: usize,
    pub top_k: usize,
    pub rng_seed: u64,
    pub budgets: Budgets,
}

impl ProjectConfig {
    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ProjectError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ProjectError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| ProjectError::Config(e.to_string()))?;
        let abs = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let must_exist = |p: PathBuf, what: &str| {
            if p.exists() {
                Ok(p)
            } else {
                Err(ProjectError::Config(format!(
                    "{what} {} does not exist",
                    p.display()
                )))
            }
        };
        let mut budgets = Budgets::default();
        if let Some(b) = &raw.budgets {
            let set = |slot: &mut Duration,
                       v: &Option<String>,
                       allow_zero: bool,
                       name: &str|
             -> Result<(), ProjectError> {
                if let Some(s) = v {
                    let d = dur(s)?;
                    if d.is_zero() && !allow_zero {
                        return Err(ProjectError::Config(format!(
                            "budget {name} must be positive"
                        )));
                    }
                    *slot = d;
                }
                Ok(())
            };
            set(&mut budgets.opt, &b.opt, false, "opt")?;
            set(&mut budgets.trial, &b.trial, false, "trial")?;
            set(&mut budgets.campaign, &b.campaign, false, "campaign")?;
            set(&mut budgets.refresh, &b.refresh, true, "refresh")?;
            set(
                &mut budgets.exec_timeout,
                &b.exec_timeout,
                false,
                "exec_timeout",
            )?;
        }
        let fixture = raw.fixture.as_deref().map(abs);
        let backend = match (raw.llm_backend.as_deref(), fixture) {
            (Some("remote"), _) => Backend::Remote,
            (Some("scripted") | None, Some(f)) => Backend::Scripted(must_exist(f, "fixture")?),
            (None, None) => Backend::Remote,
            (Some("scripted"), None) => {
                return Err(ProjectError::Config(
                    "llm_backend = \"scripted\" needs a fixture".into(),
                ))
            }
            (Some(other), _) => {
                return Err(ProjectError::Config(format!(
                    "unknown llm_backend {other:?}"
                )))
            }
        };
        if raw.corpus_roots.is_empty() {
            return Err(ProjectError::Config("corpus_roots is empty".into()));
        }
        let corpus_roots = raw
            .corpus_roots
            .iter()
            .map(|p| must_exist(abs(p), "corpus root"))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            corpus_roots,
            graph_file: must_exist(abs(&raw.graph_file), "graph_file")?,
            bug_report_file: must_exist(abs(&raw.bug_report_file), "bug_report_file")?,
            target_binary: raw
                .target_binary
                .as_deref()
                .map(abs)
                .map(|p| must_exist(p, "target_binary"))
                .transpose()?,
            work_dir: abs(&raw.work_dir),
            backend,
            embedder_command: raw.embedder_command,
            embedder_dim: raw.embedder_dim.unwrap_or(knowledge::DEFAULT_DIM),
            chunk_chars: raw.chunk_chars.unwrap_or(knowledge::DEFAULT_CHUNK_CHARS),
            overlap_chars: raw
                .overlap_chars
                .unwrap_or(knowledge::DEFAULT_OVERLAP_CHARS),
            top_k: raw.top_k.unwrap_or(knowledge::DEFAULT_TOP_K),
            rng_seed: raw.rng_seed.unwrap_or(0),
            budgets,
        })
    }

    pub fn bundle_dir(&self) -> PathBuf {
        self.work_dir.join("bundle")
    }

    pub fn campaign_dir(&self) -> PathBuf {
        self.work_dir.join("campaign")
    }

    fn engine(&self, fixture_override: Option<&Path>) -> Result<QueryEngine, ProjectError> {
        let scripted = match &self.backend {
            Backend::Scripted(f) => Some(f.as_path()),
            Backend::Remote => None,
        };
        let client = match fixture_override.or(scripted) {
            Some(f) => {
                let fx = ScriptedFixture::load(f, true)
                    .map_err(|e| ProjectError::Config(e.to_string()))?;
                LlmClient::scripted(fx)
            }
            None => {
                let cfg =
                    RemoteConfig::from_env().map_err(|e| ProjectError::Config(e.to_string()))?;
                let backend =
                    RemoteBackend::new(cfg).map_err(|e| ProjectError::Config(e.to_string()))?;
                LlmClient::new(Arc::new(backend))
            }
        };
        Ok(QueryEngine::with_builtin(client))
    }

    fn embedder(&self) -> Box<dyn Embedder> {
        match &self.embedder_command {
            Some(cmd) if !cmd.is_empty() => Box::new(CommandEmbedder {
                program: cmd[0].clone(),
                args: cmd[1..].to_vec(),
                dim: self.embedder_dim,
            }),
            _ => Box::new(HashEmbedder::new(self.embedder_dim)),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ProjectError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| io_err(p, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ProjectError> {
    let text =
        std::fs::read_to_string(path).map_err(|_| ProjectError::Missing(path.to_path_buf()))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Default)]
pub struct PrepareOptions {
    pub fixture: Option<PathBuf>,
    pub opt_budget: Option<Duration>,
    pub force: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepareOutcome {
    pub status: OptStatus,
    pub timings: StageTimings,
    pub llm_requests: u64,
    pub target_function: String,
    pub command: CommandLine,
    pub best_seed_trace: Vec<String>,
    pub random_only: bool,
}

impl PrepareOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            OptStatus::Reached => EXIT_OK,
            OptStatus::IsolatedTarget => EXIT_ISOLATED_TARGET,
            OptStatus::Timeout | OptStatus::Partial => EXIT_TIMEOUT,
        }
    }
}

struct StageClock<'a> {
    timings: StageTimings,
    path: &'a Path,
}

impl StageClock<'_> {
    fn run<T>(
        &mut self,
        stage: &str,
        f: impl FnOnce() -> Result<T, String>,
    ) -> Result<T, ProjectError> {
        let started = Instant::now();
        log::info!("stage {stage}: start");
        let r = f();
        let secs = started.elapsed().as_secs_f64();
        let status = if r.is_ok() {
            StageStatus::Ok
        } else {
            StageStatus::Failed
        };
        self.timings.record(stage, secs, status);
        self.save()?;
        log::info!("stage {stage}: {status:?} after {secs:.2}s");
        r.map_err(|message| ProjectError::Stage {
            stage: stage.to_string(),
            message,
        })
    }

    fn save(&self) -> Result<(), ProjectError> {
        write_json(self.path, &self.timings)
    }
}

/// Definition texts for every graph function found in the corpus.
pub fn collect_definitions(graph: &CallGraph, roots: &[PathBuf]) -> BTreeMap<String, String> {
    let files: Vec<(PathBuf, String)> = knowledge::chunk::corpus_files(roots)
        .into_iter()
        .filter_map(|p| {
            let bytes = std::fs::read(&p).ok()?;
            if bytes.iter().take(8192).any(|&b| b == 0) {
                return None;
            }
            Some((p, String::from_utf8_lossy(&bytes).into_owned()))
        })
        .collect();
    let mut out = BTreeMap::new();
    for id in graph.ids() {
        let node = graph.node(id).expect("listed id");
        let preferred = files
            .iter()
            .filter(|(p, _)| !node.source_file.is_empty() && p.ends_with(&node.source_file));
        let others = files
            .iter()
            .filter(|(p, _)| node.source_file.is_empty() || !p.ends_with(&node.source_file));
        if let Some(def) = preferred
            .chain(others)
            .find_map(|(_, text)| extract_definition(text, &node.name))
        {
            out.insert(node.name.clone(), def);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MutatorRecord {
    random_only: bool,
    regenerations: usize,
    attempts: Vec<mutator::Attempt>,
}

/// Runs SA, RAG, Opt and Mutator, persisting every artifact under
/// `<work_dir>/bundle`.
pub fn prepare(cfg: &ProjectConfig, opts: &PrepareOptions) -> Result<PrepareOutcome, ProjectError> {
    let bundle = cfg.bundle_dir();
    if bundle.join("stages.json").exists() || bundle.join("bug_info.json").exists() {
        if !opts.force {
            return Err(ProjectError::BundleExists(bundle));
        }
        std::fs::remove_dir_all(&bundle).map_err(|e| io_err(&bundle, e))?;
    }
    std::fs::create_dir_all(&bundle).map_err(|e| io_err(&bundle, e))?;
    let engine = cfg.engine(opts.fixture.as_deref())?;
    let stages_path = bundle.join("stages.json");
    let mut clock = StageClock {
        timings: StageTimings::default(),
        path: &stages_path,
    };
    let s = |e: &dyn std::fmt::Display| e.to_string();
    let save_usage = |engine: &QueryEngine| {
        write_json(&bundle.join("llm_usage.json"), &engine.client.accounting())
    };

    // SA
    let sa = clock.run("SA", || {
        let report = std::fs::read_to_string(&cfg.bug_report_file).map_err(|e| s(&e))?;
        let bug = knowledge::extract_bug_info(&report, &engine).map_err(|e| s(&e))?;
        let graph = CallGraph::load(&cfg.graph_file).map_err(|e| s(&e))?;
        let target = graph.resolve(&bug.vulnerable_function).ok_or_else(|| {
            format!(
                "vulnerable function {} is not in the call graph",
                bug.vulnerable_function
            )
        })?;
        let reach = graph.reachability(&target).map_err(|e| s(&e))?;
        let definitions = collect_definitions(&graph, &cfg.corpus_roots);
        let mut summaries = SummaryCache::default();
        let mut to_summarize = vec![target.clone()];
        if let Reachability::NeighborsOnly(n) = &reach {
            to_summarize.extend(n.iter().cloned());
        }
        if !matches!(reach, Reachability::Isolated) {
            for id in &to_summarize {
                let name = graph.name(id).to_string();
                let def = definitions
                    .get(&name)
                    .ok_or_else(|| format!("no definition of {name} found in the corpus"))?;
                summaries
                    .get_or_summarize(&name, def, &engine)
                    .map_err(|e| s(&e))?;
            }
        }
        Ok((bug, graph, target, reach, definitions, summaries))
    });
    save_usage(&engine)?;
    let (bug, graph, target, reach, definitions, summaries) = sa?;
    let target_name = graph.name(&target).to_string();
    write_json(&bundle.join("bug_info.json"), &bug)?;
    write_json(&bundle.join("summaries.json"), &summaries)?;
    write_json(&bundle.join("definitions.json"), &definitions)?;
    let reach_label = match &reach {
        Reachability::Chain(f) => serde_json::json!({
            "status": "chain",
            "fcc": f.functions().iter().map(|id| graph.name(id)).collect::<Vec<_>>(),
        }),
        Reachability::NeighborsOnly(n) => serde_json::json!({
            "status": "neighbors-only",
            "neighbors": n.iter().map(|id| graph.name(id)).collect::<Vec<_>>(),
        }),
        Reachability::Isolated => serde_json::json!({ "status": "isolated-target" }),
    };
    write_json(&bundle.join("graph_status.json"), &reach_label)?;
    if matches!(reach, Reachability::Isolated) {
        return Err(ProjectError::IsolatedTarget(target_name));
    }
    let target_summary = summaries
        .get(&target_name)
        .cloned()
        .expect("target summarized");

    // RAG
    let usage = clock.run("RAG", || {
        let embedder = cfg.embedder();
        let chunks = chunk_corpus(&cfg.corpus_roots, cfg.chunk_chars, cfg.overlap_chars)
            .map_err(|e| s(&e))?;
        let index = build_index(chunks, embedder.as_ref()).map_err(|e| s(&e))?;
        index.save(&bundle.join("index.rfix")).map_err(|e| s(&e))?;
        derive_program_usage(&bug, &index, embedder.as_ref(), &engine, cfg.top_k).map_err(|e| s(&e))
    });
    save_usage(&engine)?;
    let usage: ProgramUsage = usage?;
    write_json(&bundle.join("usage.json"), &usage)?;

    // Opt
    let budget = opts.opt_budget.unwrap_or(cfg.budgets.opt);
    let sandbox = Sandbox::default();
    let opt = clock.run("Opt", || {
        let started = Instant::now();
        let command =
            seedgen::select_command(&bug, &usage, &target_summary, &engine).map_err(|e| s(&e))?;
        let spec = seedgen::generate_preliminary(&command, &bug, &engine).map_err(|e| s(&e))?;
        let fillers = seedgen::preliminary_fillers(&command, &bug);
        let (bytes, _) = seedgen::materialize_with_repair(
            &spec,
            "preliminary_seed",
            &fillers,
            "input",
            &engine,
            &sandbox,
            "Opt",
        )
        .map_err(|e| s(&e))?;
        let mut runner = ProcessRunner::new(
            &command,
            cfg.target_binary.as_deref(),
            cfg.budgets.exec_timeout,
        )
        .map_err(|e| s(&e))?;
        let ctx = OptContext {
            graph: &graph,
            engine: &engine,
            definitions: &definitions,
            summaries: &summaries,
            usage: Some(&usage),
            sandbox: sandbox.clone(),
        };
        let remaining = OptBudget::wall(budget.saturating_sub(started.elapsed()));
        let seed = Seed::new(bytes, command.clone());
        let outcome = match &reach {
            Reachability::Chain(fcc) => {
                seedgen::optimize_along_fcc(seed, fcc, &ctx, &mut runner, &remaining)
            }
            _ => seedgen::optimize_by_functionality(
                seed,
                &target,
                &ctx,
                &mut runner,
                &remaining,
                cfg.rng_seed,
            ),
        }
        .map_err(|e| s(&e))?;
        Ok((command, outcome))
    });
    save_usage(&engine)?;
    let (command, outcome) = opt?;
    if outcome.status == OptStatus::Timeout {
        clock
            .timings
            .record("Opt", budget.as_secs_f64(), StageStatus::Timeout);
        clock.save()?;
    }
    write_json(&bundle.join("command.json"), &command)?;
    seedgen::write_seed_set(&bundle.join("seeds"), &outcome)
        .map_err(|e| ProjectError::Io(e.to_string()))?;
    write_json(
        &bundle.join("opt.json"),
        &serde_json::json!({
            "status": outcome.status.as_str(),
            "iterations": outcome.iterations,
            "final_trace": outcome.final_trace,
        }),
    )?;

    // Mutator
    let trial_seed = outcome.best_seed.bytes.clone();
    let thresholds = TrialThresholds {
        duration: cfg.budgets.trial,
        ..TrialThresholds::default()
    };
    let mutator_dir = bundle.join("mutators");
    let mres = clock.run("Mutator", || {
        let analysis = mutator::analyze_bug(&bug, &target_summary, &engine).map_err(|e| s(&e))?;
        let proposal = mutator::propose_strategies(&analysis, &engine, None).map_err(|e| s(&e))?;
        let mut runner = ProcessRunner::new(
            &command,
            cfg.target_binary.as_deref(),
            cfg.budgets.exec_timeout,
        )
        .map_err(|e| s(&e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let out = mutator::synthesize_accepted(&proposal.strategies, &engine, |p| {
            mutator::trial_run(p, &trial_seed, &mut runner, &thresholds, &mut rng)
        });
        if let (Some(p), Some(r)) = (&out.program, &out.report) {
            mutator::save_program(&mutator_dir, "program", p, Some(r)).map_err(|e| s(&e))?;
        }
        Ok((analysis, proposal.strategies, out))
    });
    save_usage(&engine)?;
    let (analysis, strategies, mout) = mres?;
    write_json(&bundle.join("analysis.json"), &analysis)?;
    write_json(&bundle.join("strategies.json"), &strategies)?;
    write_json(
        &bundle.join("mutator.json"),
        &MutatorRecord {
            random_only: mout.program.is_none(),
            regenerations: mout.regenerations,
            attempts: mout.attempts.clone(),
        },
    )?;
    let result = PrepareOutcome {
        status: outcome.status,
        timings: clock.timings.clone(),
        llm_requests: engine.client.request_count(),
        target_function: target_name,
        command,
        best_seed_trace: outcome.final_trace.clone(),
        random_only: mout.program.is_none(),
    };
    write_json(&bundle.join("prepare.json"), &result)?;
    Ok(result)
}

#[derive(Debug, Clone, Default)]
pub struct FuzzOptions {
    pub duration: Option<Duration>,
    pub workers: Option<usize>,
    pub mix_ratio: Option<f64>,
    pub random_only: bool,
    pub rng_seed: Option<u64>,
    /// Replaces the bundle seeds.
    pub seed_file: Option<PathBuf>,
    pub max_execs: Option<u64>,
    pub refresh: Option<Duration>,
    pub keep_going: bool,
}

/// Loads the bundle seeds: `best.bin` first, then the kept `seed-*.bin` set.
pub fn bundle_seeds(bundle: &Path) -> Result<Vec<Vec<u8>>, ProjectError> {
    let dir = bundle.join("seeds");
    let best = std::fs::read(dir.join("best.bin"))
        .map_err(|_| ProjectError::Missing(dir.join("best.bin")))?;
    let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| io_err(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("seed-"))
        })
        .collect();
    names.sort();
    let mut seeds = vec![best];
    for p in names {
        let b = std::fs::read(&p).map_err(|e| io_err(&p, e))?;
        if !seeds.contains(&b) && !b.is_empty() {
            seeds.push(b);
        }
    }
    Ok(seeds)
}

/// Runs the campaign from a prepared bundle and writes the report.
pub fn fuzz(cfg: &ProjectConfig, opts: &FuzzOptions) -> Result<CampaignStats, ProjectError> {
    let bundle = cfg.bundle_dir();
    let command: CommandLine = read_json(&bundle.join("command.json"))?;
    let prep: PrepareOutcome = read_json(&bundle.join("prepare.json"))?;
    let seeds = match &opts.seed_file {
        Some(p) => vec![std::fs::read(p).map_err(|e| io_err(p, e))?],
        None => bundle_seeds(&bundle)?,
    };
    let program_path = bundle.join("mutators").join("program.dsl");
    let source = if opts.random_only || prep.random_only {
        MutationSource::RandomOnly
    } else {
        let text = std::fs::read_to_string(&program_path)
            .map_err(|_| ProjectError::Missing(program_path.clone()))?;
        let p = MutationProgram::parse(&text).map_err(|e| {
            ProjectError::Config(format!(
                "invalid mutator file {}: {e}",
                program_path.display()
            ))
        })?;
        MutationSource::Program(p)
    };
    let mut config = CampaignConfig::new(command.clone(), seeds, prep.target_function.clone());
    config.binary = cfg.target_binary.clone();
    config.duration_limit = opts.duration.unwrap_or(cfg.budgets.campaign);
    config.exec_timeout = cfg.budgets.exec_timeout;
    config.rng_seed = opts.rng_seed.unwrap_or(cfg.rng_seed);
    config.mix_ratio = opts.mix_ratio.unwrap_or(campaign::DEFAULT_MIX_RATIO);
    config.workers = opts.workers.unwrap_or(1);
    config.max_execs = opts.max_execs;
    config.stop_on_first = !opts.keep_going;
    config.refresh_period = opts.refresh.unwrap_or(cfg.budgets.refresh);
    let dir = cfg.campaign_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    if let MutationSource::Program(p) = &source {
        mutator::save_program(&dir.join("mutators"), "program-0", p, None)
            .map_err(|e| ProjectError::Io(e.to_string()))?;
    }

    let mut refresher_state = None;
    if !matches!(source, MutationSource::RandomOnly) && !config.refresh_period.is_zero() {
        let analysis: mutator::BugAnalysis = read_json(&bundle.join("analysis.json"))?;
        let strategies: Vec<MutationStrategy> = read_json(&bundle.join("strategies.json"))?;
        refresher_state = Some((cfg.engine(None)?, analysis, strategies));
    }
    let thresholds = TrialThresholds {
        duration: cfg.budgets.trial,
        ..TrialThresholds::default()
    };
    let trial_seed = config.seeds[0].clone();
    let mutators_dir = dir.join("mutators");
    let mut refresh = |ordinal: u64| -> Option<MutationProgram> {
        let (engine, analysis, prior) = refresher_state.as_mut()?;
        let proposal = match mutator::propose_strategies(analysis, engine, Some(prior)) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("refresh {ordinal}: strategy proposal failed: {e}");
                return None;
            }
        };
        let mut runner = ProcessRunner::new(
            &command,
            cfg.target_binary.as_deref(),
            cfg.budgets.exec_timeout,
        )
        .ok()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(ordinal));
        let out = mutator::synthesize_accepted(&proposal.strategies, engine, |p| {
            mutator::trial_run(p, &trial_seed, &mut runner, &thresholds, &mut rng)
        });
        *prior = proposal.strategies;
        let p = out.program?;
        if let Err(e) = mutator::save_program(
            &mutators_dir,
            &format!("program-{ordinal}"),
            &p,
            out.report.as_ref(),
        ) {
            log::warn!("{e}");
        }
        Some(p)
    };
    let stats =
        campaign::run_process(&config, source, Some(&dir), Some(&mut refresh)).map_err(|e| {
            ProjectError::Stage {
                stage: "fuzz".into(),
                message: e.to_string(),
            }
        })?;
    let stages: StageTimings = read_json(&bundle.join("stages.json")).unwrap_or_default();
    let text = render_report(&stages, Some(&stats));
    std::fs::write(dir.join("report.txt"), &text).map_err(|e| io_err(&dir, e))?;
    Ok(stats)
}

/// Renders the report from persisted artifacts only.
pub fn report(work_dir: &Path) -> Result<String, ProjectError> {
    let stages_path = work_dir.join("bundle").join("stages.json");
    let stats_path = work_dir.join("campaign").join("stats.json");
    if !stages_path.exists() && !stats_path.exists() {
        return Err(ProjectError::Missing(stages_path));
    }
    let stages: StageTimings = if stages_path.exists() {
        read_json(&stages_path)?
    } else {
        StageTimings::default()
    };
    let stats: Option<CampaignStats> = if stats_path.exists() {
        Some(read_json(&stats_path)?)
    } else {
        None
    };
    Ok(render_report(&stages, stats.as_ref()))
}
