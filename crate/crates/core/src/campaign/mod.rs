//! Target execution and the directed fuzzing loop.

pub mod exec;
pub mod mutate;
pub mod report;

pub use exec::{
    ExecError, ExecResult, ExitKind, ProcessRunner, Runner, DEFAULT_EXEC_TIMEOUT, TRACE_ENV,
};
pub use mutate::{random_mutate, RandomOp};
pub use report::{render_report, StageStatus, StageTiming, StageTimings, STAGES};

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mutator::MutationProgram;
use crate::seedgen::CommandLine;

pub const DEFAULT_MIX_RATIO: f64 = 0.8;
const SPAWN_FAILURE_LIMIT: u64 = 10;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign configuration: {0}")]
    InvalidConfig(String),
    #[error("target could not be started: {0}")]
    Spawn(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub command: CommandLine,
    /// Where the program lives; defaults to `command.program`.
    pub binary: Option<PathBuf>,
    pub seeds: Vec<Vec<u8>>,
    pub target_function: String,
    pub duration_limit: Duration,
    pub exec_timeout: Duration,
    pub rng_seed: u64,
    pub mix_ratio: f64,
    /// Zero disables refresh.
    pub refresh_period: Duration,
    pub stop_on_first: bool,
    pub max_execs: Option<u64>,
    pub workers: usize,
}

impl CampaignConfig {
    pub fn new(
        command: CommandLine,
        seeds: Vec<Vec<u8>>,
        target_function: impl Into<String>,
    ) -> Self {
        Self {
            command,
            binary: None,
            seeds,
            target_function: target_function.into(),
            duration_limit: Duration::from_secs(60),
            exec_timeout: DEFAULT_EXEC_TIMEOUT,
            rng_seed: 0,
            mix_ratio: DEFAULT_MIX_RATIO,
            refresh_period: Duration::ZERO,
            stop_on_first: true,
            max_execs: None,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: &str| Err(CampaignError::InvalidConfig(m.into()));
        if self.seeds.is_empty() {
            return bad("no seeds");
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad("mix_ratio must be within [0, 1]");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.target_function.trim().is_empty() {
            return bad("no target function");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum MutationSource {
    RandomOnly,
    Program(MutationProgram),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub input_hash: String,
    pub class: String,
    pub reached_target: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    /// Seconds from campaign start.
    pub time_to_first_target_crash: Option<f64>,
    pub execs_to_first_target_crash: Option<u64>,
    pub total_execs: u64,
    pub execs_reaching_target: u64,
    pub crashes: Vec<CrashRecord>,
    pub refresh_events: u64,
    pub clamp_events: u64,
    pub harness_faults: u64,
    pub random_only: bool,
    pub corpus_size: usize,
    pub covered_functions: Vec<String>,
    pub elapsed: f64,
}

impl CampaignStats {
    /// Copy with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self {
            time_to_first_target_crash: self.time_to_first_target_crash.map(|_| 0.0),
            elapsed: 0.0,
            ..self.clone()
        }
    }

    pub fn found_target_crash(&self) -> bool {
        self.execs_to_first_target_crash.is_some()
    }
}

pub fn input_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Called at refresh boundaries with the refresh ordinal (1-based);
/// returns a replacement program when one was accepted.
pub type Refresher<'a> = dyn FnMut(u64) -> Option<MutationProgram> + Send + 'a;

/// Builds the runner for worker `i`.
pub type RunnerFactory<'a> = dyn Fn(usize) -> Result<Box<dyn Runner + Send>, ExecError> + Sync + 'a;

struct State {
    corpus: Vec<Vec<u8>>,
    covered: BTreeSet<String>,
    crash_hashes: HashSet<String>,
    next_seed: usize,
    reserved: u64,
    successes: u64,
    spawn_failures: u64,
    stats: CampaignStats,
    events: Option<BufWriter<File>>,
    dir: Option<PathBuf>,
    fatal: Option<CampaignError>,
}

impl State {
    fn save(&self, sub: &str, name: &str, bytes: &[u8]) {
        if let Some(d) = &self.dir {
            let p = d.join(sub).join(name);
            if let Err(e) = std::fs::write(&p, bytes) {
                log::warn!("cannot write {}: {e}", p.display());
            }
        }
    }
}

struct Shared<'c> {
    config: &'c CampaignConfig,
    state: Mutex<State>,
    program: RwLock<Option<Arc<MutationProgram>>>,
    stop: AtomicBool,
    started: Instant,
}

impl Shared<'_> {
    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn worker(shared: &Shared, id: usize, runner: &mut dyn Runner) {
    let cfg = shared.config;
    let n_seeds = cfg.seeds.len() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(id as u64));
    loop {
        if shared.stop.load(Ordering::SeqCst) || shared.started.elapsed() >= cfg.duration_limit {
            break;
        }
        let (idx, seed_idx, input) = {
            let mut st = shared.lock();
            if cfg.max_execs.is_some_and(|m| st.reserved >= m) {
                break;
            }
            let idx = st.reserved;
            st.reserved += 1;
            let seed_idx = if idx < n_seeds {
                idx as usize
            } else {
                let i = st.next_seed % st.corpus.len();
                st.next_seed += 1;
                i
            };
            (idx, seed_idx, st.corpus[seed_idx].clone())
        };
        let program = shared
            .program
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone();
        let (bytes, kind, clamps) = if idx < n_seeds {
            (input, "seed", 0)
        } else {
            match program {
                Some(p) if rng.gen::<f64>() < cfg.mix_ratio => {
                    let m = p.apply(&input, &mut rng);
                    (m.bytes, "program", m.clamps)
                }
                _ => {
                    let (b, op) = random_mutate(&input, &mut rng);
                    (b, op.name(), 0)
                }
            }
        };
        let result = runner.run(&bytes);
        let mut st = shared.lock();
        let r = match result {
            Ok(r) => {
                st.successes += 1;
                r
            }
            Err(ExecError::Spawn { program, reason }) => {
                st.spawn_failures += 1;
                if st.successes == 0 && st.spawn_failures >= SPAWN_FAILURE_LIMIT {
                    st.fatal = Some(CampaignError::Spawn(format!("{program}: {reason}")));
                    shared.stop.store(true, Ordering::SeqCst);
                }
                continue;
            }
            Err(e) => {
                log::warn!("harness fault: {e}");
                st.stats.harness_faults += 1;
                continue;
            }
        };
        let hash = input_hash(&bytes);
        st.stats.total_execs += 1;
        st.stats.clamp_events += clamps;
        let reached = r.reached(&cfg.target_function);
        if reached {
            st.stats.execs_reaching_target += 1;
        }
        let fresh: Vec<String> = r
            .trace
            .iter()
            .filter(|f| !st.covered.contains(*f))
            .cloned()
            .collect();
        let mut new_fns = 0;
        for f in fresh {
            if st.covered.insert(f) {
                new_fns += 1;
            }
        }
        if new_fns > 0 && !bytes.is_empty() && kind != "seed" {
            let n = st.corpus.len();
            st.save("corpus", &format!("id-{n:06}-{hash}.bin"), &bytes);
            st.corpus.push(bytes.clone());
        }
        if let ExitKind::Crash { class } = &r.exit {
            if st.crash_hashes.insert(hash.clone()) {
                st.save("crashes", &format!("{hash}.bin"), &bytes);
                st.stats.crashes.push(CrashRecord {
                    input_hash: hash.clone(),
                    class: class.clone(),
                    reached_target: reached,
                });
            }
            if reached && st.stats.execs_to_first_target_crash.is_none() {
                st.stats.time_to_first_target_crash = Some(shared.started.elapsed().as_secs_f64());
                st.stats.execs_to_first_target_crash = Some(st.stats.total_execs);
                if cfg.stop_on_first {
                    shared.stop.store(true, Ordering::SeqCst);
                }
            }
        }
        let line = format!(
            "{idx}\tworker={id}\tseed={seed_idx}\tmut={kind}\thash={hash}\tlen={}\texit={}\ttarget={}\tnew_fns={new_fns}\n",
            bytes.len(),
            r.exit.label(),
            u8::from(reached),
        );
        if let Some(w) = st.events.as_mut() {
            let _ = w.write_all(line.as_bytes());
        }
    }
}

/// Runs a campaign. With `dir`, writes `corpus/`, `crashes/`, `events.log`
/// and `stats.json` there.
pub fn run(
    config: &CampaignConfig,
    source: MutationSource,
    dir: Option<&Path>,
    make_runner: &RunnerFactory,
    mut refresher: Option<&mut Refresher>,
) -> Result<CampaignStats, CampaignError> {
    config.validate()?;
    let io = |e: std::io::Error| CampaignError::Io(e.to_string());
    let mut events = None;
    if let Some(d) = dir {
        for sub in ["corpus", "crashes", "mutators"] {
            std::fs::create_dir_all(d.join(sub)).map_err(io)?;
        }
        events = Some(BufWriter::new(
            File::create(d.join("events.log")).map_err(io)?,
        ));
    }
    let (program, random_only) = match source {
        MutationSource::RandomOnly => (None, true),
        MutationSource::Program(p) => (Some(Arc::new(p)), false),
    };
    let mut runners = Vec::with_capacity(config.workers);
    for i in 0..config.workers {
        runners.push(make_runner(i).map_err(|e| CampaignError::Spawn(e.to_string()))?);
    }
    let shared = Shared {
        config,
        state: Mutex::new(State {
            corpus: config.seeds.clone(),
            covered: BTreeSet::new(),
            crash_hashes: HashSet::new(),
            next_seed: 0,
            reserved: 0,
            successes: 0,
            spawn_failures: 0,
            stats: CampaignStats {
                random_only,
                ..CampaignStats::default()
            },
            events,
            dir: dir.map(Path::to_path_buf),
            fatal: None,
        }),
        program: RwLock::new(program),
        stop: AtomicBool::new(false),
        started: Instant::now(),
    };
    let period = config.refresh_period;
    let refreshing = !random_only && !period.is_zero() && refresher.is_some();
    std::thread::scope(|s| {
        let handles: Vec<_> = runners
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                let shared = &shared;
                s.spawn(move || worker(shared, i, r.as_mut()))
            })
            .collect();
        let mut last = Duration::ZERO;
        let mut ordinal = 0u64;
        while handles.iter().any(|h| !h.is_finished()) {
            std::thread::sleep(Duration::from_millis(10));
            let now = shared.started.elapsed();
            if !refreshing || now > config.duration_limit || shared.stop.load(Ordering::SeqCst) {
                continue;
            }
            if crate::mutator::refresh_due(last, now, period) {
                last += period;
                ordinal += 1;
                shared.lock().stats.refresh_events += 1;
                log::info!("mutator refresh {ordinal} at {:.1}s", now.as_secs_f64());
                if let Some(p) = refresher.as_mut().and_then(|r| r(ordinal)) {
                    *shared.program.write().unwrap_or_else(|p| p.into_inner()) = Some(Arc::new(p));
                }
            }
        }
    });
    let mut st = shared.state.into_inner().unwrap_or_else(|p| p.into_inner());
    if let Some(e) = st.fatal.take() {
        return Err(e);
    }
    if let Some(w) = st.events.as_mut() {
        w.flush().map_err(io)?;
    }
    st.stats.elapsed = shared.started.elapsed().as_secs_f64();
    st.stats.corpus_size = st.corpus.len();
    st.stats.covered_functions = st.covered.iter().cloned().collect();
    if let Some(d) = dir {
        let json = serde_json::to_string_pretty(&st.stats)
            .map_err(|e| CampaignError::Io(e.to_string()))?;
        std::fs::write(d.join("stats.json"), json).map_err(io)?;
    }
    Ok(st.stats)
}

/// [`run`] with one [`ProcessRunner`] per worker.
pub fn run_process(
    config: &CampaignConfig,
    source: MutationSource,
    dir: Option<&Path>,
    refresher: Option<&mut Refresher>,
) -> Result<CampaignStats, CampaignError> {
    let factory = |_: usize| -> Result<Box<dyn Runner + Send>, ExecError> {
        Ok(Box::new(ProcessRunner::new(
            &config.command,
            config.binary.as_deref(),
            config.exec_timeout,
        )?))
    };
    run(config, source, dir, &factory, refresher)
}
