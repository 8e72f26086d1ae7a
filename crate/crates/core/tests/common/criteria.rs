//! One function per acceptance criterion. Each returns a one-line detail on
//! success and the first violated expectation on failure.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use dirfuzz::callgraph::{CallGraph, Fcc};
use dirfuzz::campaign::{
    self, render_report, CampaignConfig, CampaignStats, MutationSource, ProcessRunner, StageStatus,
    StageTimings,
};
use dirfuzz::llm::{LlmClient, ScriptedFixture};
use dirfuzz::mutator::{
    self, trial_run, Expr, MutationProgram, MutationStrategy, Op, Pos, TrialThresholds, Verdict,
};
use dirfuzz::project::{self, FuzzOptions, PrepareOptions, ProjectConfig};
use dirfuzz::query::QueryEngine;
use dirfuzz::seedgen::CommandLine;

use super::*;

pub const TARGET: &str = "get_rgb_row";

/// Wall-clock cap for a random-only campaign that has not found the crash.
pub const RANDOM_ONLY_CAP: Duration = Duration::from_secs(15);

pub fn engine(fixture: &str) -> QueryEngine {
    QueryEngine::with_builtin(LlmClient::scripted(
        ScriptedFixture::parse(fixture, true).expect("fixture parses"),
    ))
}

pub fn ppm_command() -> CommandLine {
    CommandLine::parse("ppmcheck @@", "check one image").unwrap()
}

/// A prepared toy project in a fresh temporary directory.
pub fn prepared_toy(opts: &ToyOptions) -> Result<(TempDir, ProjectConfig), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = write_toy_config(dir.path(), opts);
    let cfg = ProjectConfig::load(&path).map_err(|e| e.to_string())?;
    let out = project::prepare(&cfg, &PrepareOptions::default()).map_err(|e| e.to_string())?;
    ensure!(
        out.status.as_str() == "reached",
        "prepare ended with {}",
        out.status.as_str()
    );
    Ok((dir, cfg))
}

pub fn bundle_program(cfg: &ProjectConfig) -> Result<MutationProgram, String> {
    let text = std::fs::read_to_string(cfg.bundle_dir().join("mutators/program.dsl"))
        .map_err(|e| e.to_string())?;
    MutationProgram::parse(&text).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- 3

pub fn c3_worked_example() -> Outcome {
    let g = CallGraph::from_edges(
        &["E", "A", "B", "C", "T"],
        &[("E", "A"), ("A", "B"), ("A", "C"), ("C", "T")],
        "E",
    )
    .map_err(|e| e.to_string())?;
    let fcc = g
        .complete_fcc(&fid("T"))
        .map_err(|e| e.to_string())?
        .ok_or("no chain")?;
    let want =
        Fcc::new(&g, vec![fid("E"), fid("A"), fid("C"), fid("T")]).map_err(|e| e.to_string())?;
    ensure!(fcc == want, "chain {:?}", fcc.functions());
    let dev = g
        .deviation(&fcc, &g.observe(&["E", "A", "B"]))
        .map_err(|e| e.to_string())?
        .ok_or("no deviation")?;
    ensure!(
        dev.function.0 == "A" && dev.next_goal.0 == "C",
        "deviation {dev:?}"
    );
    Ok(format!(
        "deviation {} next goal {} distance {}",
        dev.function, dev.next_goal, dev.distance
    ))
}

// ---------------------------------------------------------------- 4

pub fn c4_end_to_end_prepare() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = write_toy_config(dir.path(), &ToyOptions::default());
    let started = Instant::now();
    let out = Command::new(dirfuzz_bin())
        .args(["prepare", "--config"])
        .arg(&config)
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    ensure!(
        out.status.code() == Some(0),
        "exit {:?}: {}{}",
        out.status.code(),
        stdout,
        String::from_utf8_lossy(&out.stderr)
    );
    ensure!(stdout.contains("status: reached"), "stdout: {stdout}");
    let requests: u64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("llm requests: "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or("no request count printed")?;
    ensure!(requests <= 20, "{requests} LLM requests");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    let seed =
        std::fs::read(dir.path().join("work/bundle/seeds/best.bin")).map_err(|e| e.to_string())?;
    let (trace, _) = ppmcheck_trace(&seed);
    ensure!(trace.iter().any(|f| f == TARGET), "seed trace {trace:?}");
    Ok(format!(
        "reached with {requests} requests in {:.1}s, seed of {} bytes traces {}",
        elapsed.as_secs_f64(),
        seed.len(),
        trace.join(" > ")
    ))
}

// ---------------------------------------------------------------- 5

pub const MALFORMED_THEN_VALID: &str = "\
match: Revise the mutation program
response:
~~~
PROGRAM:
```
AddToLE(@row_len=11, 4, +0x10000)
```
STRATEGY_REFS: S1
~~~

match: Translate the mutation strategies
response:
~~~
PROGRAM:
```
AddToLE(@row_len=11, 4)
```
STRATEGY_REFS: S1
~~~
";

pub const HUGE_RESIZE_THEN_VALID: &str = "\
match: rejected-slow
response:
~~~
PROGRAM:
```
AddToLE(@row_len=11, 4, +0x10000)
```
STRATEGY_REFS: S1
~~~

match: Translate the mutation strategies
response:
~~~
PROGRAM:
```
ResizeTo(0x10000000, 0)
```
STRATEGY_REFS: S1
~~~
";

pub const HUGE_RESIZE_ALWAYS: &str = "\
match: Translate the mutation strategies
response:
~~~
PROGRAM:
```
ResizeTo(0x10000000, 0)
```
~~~
";

pub fn toy_strategies() -> Vec<MutationStrategy> {
    vec![MutationStrategy {
        description: "inflate the little-endian row length beyond width * 3".into(),
        rationale: "the row buffer is sized from the width".into(),
    }]
}

/// Trial against the real ppmcheck binary.
pub fn real_trial(duration: Duration) -> impl FnMut(&MutationProgram) -> mutator::TrialReport {
    let mut runner = ProcessRunner::new(
        &ppm_command(),
        Some(&ppmcheck_bin()),
        Duration::from_secs(1),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let thresholds = TrialThresholds {
        duration,
        ..TrialThresholds::default()
    };
    move |p| trial_run(p, &ppm_seed(6), &mut runner, &thresholds, &mut rng)
}

pub fn c5_mutator_pipeline() -> Outcome {
    let trial_len = Duration::from_secs(1);

    let e = engine(MALFORMED_THEN_VALID);
    let out = mutator::synthesize_accepted(&toy_strategies(), &e, real_trial(trial_len));
    let requests = e.client.request_count();
    ensure!(
        requests == 2,
        "malformed then valid: {requests} synthesis requests"
    );
    let verdict = out.report.as_ref().map(|r| r.verdict);
    ensure!(
        out.program.is_some() && verdict == Some(Verdict::Accepted),
        "malformed then valid: {verdict:?}"
    );

    let e = engine(HUGE_RESIZE_THEN_VALID);
    let out = mutator::synthesize_accepted(&toy_strategies(), &e, real_trial(trial_len));
    let first = out
        .attempts
        .first()
        .and_then(|a| a.report.clone())
        .ok_or("no first trial")?;
    ensure!(
        first.verdict == Verdict::RejectedSlow,
        "256 MiB resize judged {}",
        first.verdict.as_str()
    );
    ensure!(
        out.regenerations == 1 && out.program.is_some(),
        "resize: {} regenerations",
        out.regenerations
    );
    let slow_rate = first.execs_per_sec;

    let e = engine(HUGE_RESIZE_ALWAYS);
    let out = mutator::synthesize_accepted(&toy_strategies(), &e, real_trial(trial_len));
    ensure!(
        out.program.is_none() && out.regenerations == mutator::MAX_REGENERATIONS,
        "persistent resize: {} regenerations, program {:?}",
        out.regenerations,
        out.program
    );
    let requests = e.client.request_count() as usize;
    ensure!(
        requests == 1 + mutator::MAX_REGENERATIONS,
        "persistent resize: {requests} requests"
    );
    Ok(format!(
        "2 requests then accepted; resize rejected-slow at {slow_rate:.2} execs/s and regenerated; gave up after {} regenerations",
        mutator::MAX_REGENERATIONS
    ))
}

// ---------------------------------------------------------------- 6

#[derive(Debug, Clone)]
pub struct Pair {
    pub rng_seed: u64,
    pub directed: CampaignStats,
    pub random: CampaignStats,
}

impl Pair {
    /// Executions the random-only run needed, or at least spent without success.
    pub fn random_execs(&self) -> u64 {
        self.random
            .execs_to_first_target_crash
            .unwrap_or(self.random.total_execs)
    }

    pub fn ratio(&self) -> Option<f64> {
        let d = self.directed.execs_to_first_target_crash?;
        Some(self.random_execs() as f64 / d.max(1) as f64)
    }

    pub fn passes(&self) -> bool {
        self.ratio().is_some_and(|r| r >= 5.0)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

pub fn c6_directedness() -> Outcome {
    let (_dir, cfg) = prepared_toy(&ToyOptions::default())?;
    let seeds = project::bundle_seeds(&cfg.bundle_dir()).map_err(|e| e.to_string())?;
    let program = bundle_program(&cfg)?;
    let campaign = |rng_seed: u64, random: bool| -> Result<CampaignStats, String> {
        let mut c = CampaignConfig::new(
            ppm_command(),
            if random {
                vec![vec![0u8; 16]]
            } else {
                seeds.clone()
            },
            TARGET,
        );
        c.binary = Some(ppmcheck_bin());
        c.rng_seed = rng_seed;
        c.duration_limit = if random {
            RANDOM_ONLY_CAP
        } else {
            Duration::from_secs(60)
        };
        let source = if random {
            MutationSource::RandomOnly
        } else {
            MutationSource::Program(program.clone())
        };
        campaign::run_process(&c, source, None, None).map_err(|e| e.to_string())
    };
    let pairs: Vec<Pair> = std::thread::scope(|s| {
        let handles: Vec<_> = (1..=5u64)
            .map(|seed| {
                let campaign = &campaign;
                s.spawn(move || -> Result<Pair, String> {
                    Ok(Pair {
                        rng_seed: seed,
                        directed: campaign(seed, false)?,
                        random: campaign(seed, true)?,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .collect::<Result<_, _>>()
    })?;
    let wins = pairs.iter().filter(|p| p.passes()).count();
    let med = median(
        pairs
            .iter()
            .map(|p| {
                p.directed
                    .time_to_first_target_crash
                    .unwrap_or(f64::INFINITY)
            })
            .collect(),
    );
    let detail = pairs
        .iter()
        .map(|p| {
            format!(
                "seed {}: {}/{}",
                p.rng_seed,
                p.directed
                    .execs_to_first_target_crash
                    .map_or("-".into(), |n| n.to_string()),
                p.random_execs()
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(
        wins >= 4,
        "{wins}/5 pairs with a 5x execution advantage ({detail})"
    );
    ensure!(med <= 60.0, "median time to bug {med:.1}s ({detail})");
    Ok(format!(
        "{wins}/5 pairs, median {med:.2}s; directed/random execs {detail}"
    ))
}

// ---------------------------------------------------------------- 7

fn fuzz_opts() -> FuzzOptions {
    FuzzOptions {
        duration: Some(Duration::from_secs(60)),
        workers: Some(1),
        mix_ratio: None,
        random_only: false,
        rng_seed: Some(7),
        seed_file: None,
        max_execs: Some(400),
        refresh: Some(Duration::ZERO),
        keep_going: true,
    }
}

pub fn c7_determinism() -> Outcome {
    let (_dir, cfg) = prepared_toy(&ToyOptions::default())?;
    let mut runs = Vec::new();
    for _ in 0..2 {
        let stats = project::fuzz(&cfg, &fuzz_opts()).map_err(|e| e.to_string())?;
        let log =
            std::fs::read(cfg.campaign_dir().join("events.log")).map_err(|e| e.to_string())?;
        runs.push((stats, log));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure!(
        a.1 == b.1,
        "events.log differs ({} vs {} bytes)",
        a.1.len(),
        b.1.len()
    );
    ensure!(
        a.0.without_timing() == b.0.without_timing(),
        "stats differ: {:?} vs {:?}",
        a.0,
        b.0
    );
    ensure!(a.0.total_execs == 400, "ran {} execs", a.0.total_execs);
    Ok(format!(
        "{} execs, {} crashes, {} bytes of identical events",
        a.0.total_execs,
        a.0.crashes.len(),
        a.1.len()
    ))
}

// ---------------------------------------------------------------- 8

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn timings(v: &[(&str, f64, StageStatus)]) -> StageTimings {
    let mut t = StageTimings::default();
    for (n, s, st) in v {
        t.record(n, *s, *st);
    }
    t
}

pub fn sample_stats() -> CampaignStats {
    CampaignStats {
        time_to_first_target_crash: Some(12.34),
        execs_to_first_target_crash: Some(57),
        total_execs: 1200,
        execs_reaching_target: 800,
        crashes: vec![campaign::CrashRecord {
            input_hash: "00112233aabbccdd".into(),
            class: "SIGABRT".into(),
            reached_target: true,
        }],
        refresh_events: 2,
        clamp_events: 3,
        ..CampaignStats::default()
    }
}

/// Report inputs and the golden file each must render to.
pub fn golden_cases() -> Vec<(&'static str, StageTimings, Option<CampaignStats>)> {
    use StageStatus::*;
    vec![
        (
            "stages_sum.txt",
            timings(&[
                ("SA", 24.0, Ok),
                ("RAG", 95.0, Ok),
                ("Opt", 693.0, Ok),
                ("Mutator", 145.0, Ok),
            ]),
            None,
        ),
        (
            "stages_rounding.txt",
            timings(&[
                ("SA", 0.4, Ok),
                ("RAG", 1.5, Ok),
                ("Opt", 2.49, Ok),
                ("Mutator", 10.51, Ok),
            ]),
            None,
        ),
        (
            "opt_timeout.txt",
            timings(&[("SA", 3.2, Ok), ("RAG", 7.9, Ok), ("Opt", 3600.0, Timeout)]),
            None,
        ),
        (
            "partial_bundle.txt",
            timings(&[("SA", 2.0, Ok), ("RAG", 4.0, Ok)]),
            None,
        ),
        (
            "with_campaign.txt",
            timings(&[
                ("SA", 24.0, Ok),
                ("RAG", 95.0, Ok),
                ("Opt", 693.0, Ok),
                ("Mutator", 145.0, Ok),
            ]),
            Some(sample_stats()),
        ),
        (
            "campaign_timeout.txt",
            timings(&[
                ("SA", 1.0, Ok),
                ("RAG", 1.0, Ok),
                ("Opt", 1.0, Ok),
                ("Mutator", 2.0, Ok),
            ]),
            Some(CampaignStats {
                total_execs: 90000,
                random_only: true,
                ..CampaignStats::default()
            }),
        ),
    ]
}

fn stage_cells(report: &str) -> Vec<String> {
    let mut lines = report.lines().skip_while(|l| !l.starts_with("| SA"));
    lines.next();
    lines.next();
    lines
        .next()
        .unwrap_or_default()
        .trim_matches('|')
        .split('|')
        .map(|c| c.trim().to_string())
        .collect()
}

pub fn c8_report_schema() -> Outcome {
    let mut checked = 0;
    for (name, stages, stats) in golden_cases() {
        let want =
            std::fs::read_to_string(golden_dir().join(name)).map_err(|e| format!("{name}: {e}"))?;
        let got = render_report(&stages, stats.as_ref());
        ensure!(got == want, "{name} differs:\n{got}");

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        std::fs::create_dir_all(dir.path().join("bundle")).unwrap();
        std::fs::write(
            dir.path().join("bundle/stages.json"),
            serde_json::to_string(&stages).unwrap(),
        )
        .unwrap();
        if let Some(s) = &stats {
            std::fs::create_dir_all(dir.path().join("campaign")).unwrap();
            std::fs::write(
                dir.path().join("campaign/stats.json"),
                serde_json::to_string(s).unwrap(),
            )
            .unwrap();
        }
        let out = Command::new(dirfuzz_bin())
            .args(["report", "--dir"])
            .arg(dir.path())
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            String::from_utf8_lossy(&out.stdout) == want,
            "{name}: CLI report differs"
        );
        ensure!(
            got.contains("| SA | RAG | Opt | Mutator | Total |"),
            "{name}: header order"
        );
        checked += 1;
    }
    let sum = render_report(&golden_cases()[0].1, None);
    let cells = stage_cells(&sum);
    let parts: u64 = cells[..4]
        .iter()
        .map(|c| c.trim_end_matches('s').parse::<u64>().unwrap())
        .sum();
    ensure!(
        cells[4] == format!("{parts}s") && parts == 957,
        "total cells {cells:?}"
    );
    let to = stage_cells(&render_report(&golden_cases()[2].1, None));
    ensure!(to[2] == "T.O." && to[4] == "T.O.", "timeout cells {to:?}");
    Ok(format!(
        "{checked} golden reports, 24+95+693+145 = {}",
        cells[4]
    ))
}

// ---------------------------------------------------------------- 9

pub fn c9_refresh_bound() -> Outcome {
    let (_dir, cfg) = prepared_toy(&ToyOptions::default())?;
    let opts = FuzzOptions {
        duration: Some(Duration::from_secs(30)),
        workers: Some(1),
        mix_ratio: None,
        random_only: false,
        rng_seed: Some(3),
        seed_file: None,
        max_execs: None,
        refresh: Some(Duration::from_secs(5)),
        keep_going: true,
    };
    let stats = project::fuzz(&cfg, &opts).map_err(|e| e.to_string())?;
    let saved = std::fs::read_dir(cfg.campaign_dir().join("mutators"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".dsl"))
        .count();
    ensure!(
        (5..=7).contains(&stats.refresh_events),
        "{} refresh events",
        stats.refresh_events
    );
    Ok(format!(
        "{} refresh events in {:.1}s, {} programs saved",
        stats.refresh_events, stats.elapsed, saved
    ))
}

// ---------------------------------------------------------------- 10

fn random_pos(rng: &mut ChaCha8Rng) -> Pos {
    let expr = match rng.gen_range(0..3) {
        0 => Expr::Abs(rng.gen_range(0..80)),
        1 => Expr::End(rng.gen_range(0..8)),
        _ => {
            let a = rng.gen_range(0..64);
            Expr::Rand(a, a + rng.gen_range(0..64))
        }
    };
    let name = rng
        .gen_bool(0.2)
        .then(|| format!("f{}", rng.gen_range(0..5)));
    Pos { name, expr }
}

fn random_len(rng: &mut ChaCha8Rng) -> Pos {
    let expr = match rng.gen_range(0..3) {
        0 => Expr::Abs(rng.gen_range(0..300)),
        1 => Expr::End(rng.gen_range(0..16)),
        _ => {
            let a = rng.gen_range(0..200);
            Expr::Rand(a, a + rng.gen_range(0..100))
        }
    };
    Pos { name: None, expr }
}

fn random_bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.gen_range(1..=max);
    (0..n).map(|_| rng.gen()).collect()
}

pub fn random_op(rng: &mut ChaCha8Rng) -> Op {
    match rng.gen_range(0..8) {
        0 => Op::FlipBit {
            offset: random_pos(rng),
            bit: rng.gen_range(0..8),
        },
        1 => Op::SetByte {
            offset: random_pos(rng),
            value: rng.gen(),
        },
        2 => Op::InsertBytes {
            offset: random_pos(rng),
            bytes: random_bytes(rng, 16),
        },
        3 => Op::DeleteRange {
            offset: random_pos(rng),
            len: random_len(rng),
        },
        4 => Op::Overwrite {
            offset: random_pos(rng),
            bytes: random_bytes(rng, 16),
        },
        5 => Op::AddToLE {
            offset: random_pos(rng),
            width: [1, 2, 4, 8][rng.gen_range(0..4)],
            delta: rng.gen_range(-70000..70000),
        },
        6 => Op::ResizeTo {
            len: random_len(rng),
            fill: rng.gen(),
        },
        _ => Op::CopyRegion {
            src: random_pos(rng),
            dst: random_pos(rng),
            len: random_len(rng),
        },
    }
}

pub fn random_program(rng: &mut ChaCha8Rng) -> MutationProgram {
    let n = rng.gen_range(1..=6);
    MutationProgram::new((0..n).map(|_| random_op(rng)).collect())
}

/// Applies `count` random programs twice each with replayed RNG streams.
pub fn purity_sweep(count: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clamps = 0u64;
    let mut max_growth = 0i64;
    for case in 0..count {
        let program = random_program(&mut rng);
        let reparsed =
            MutationProgram::parse(&program.to_text()).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            reparsed.ops == program.ops,
            "case {case}: text round trip changed the program"
        );
        let input = {
            let n = rng.gen_range(0..=128);
            (0..n).map(|_| rng.gen()).collect::<Vec<u8>>()
        };
        let stream: u64 = rng.gen();
        let a = program.apply(&input, &mut ChaCha8Rng::seed_from_u64(stream));
        let b = reparsed.apply(&input, &mut ChaCha8Rng::seed_from_u64(stream));
        ensure!(
            a == b,
            "case {case}: replay differs for {}",
            program.to_text()
        );
        let bound = program.max_output_len(input.len());
        ensure!(
            a.bytes.len() as u64 <= bound,
            "case {case}: {} bytes from {} exceeds bound {bound}: {}",
            a.bytes.len(),
            input.len(),
            program.to_text()
        );
        clamps += a.clamps;
        max_growth = max_growth.max(a.bytes.len() as i64 - input.len() as i64);
    }
    Ok(format!(
        "{count} programs replayed, {clamps} clamps, max growth {max_growth} bytes"
    ))
}

pub fn c10_purity_sweep() -> Outcome {
    purity_sweep(10_000, 10)
}
