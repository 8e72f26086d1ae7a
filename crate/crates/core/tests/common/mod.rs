//! Oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dirfuzz::callgraph::{CallGraph, Distance, FunctionId};
use dirfuzz::knowledge::{Chunk, Embedder, EmbeddingIndex};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if let false = $cond {
            return Err(format!($($fmt)+));
        }
    };
}
#[allow(unused_imports)]
pub(crate) use ensure;

pub mod criteria;

// ---------------------------------------------------------------- graphs

pub struct RandomDag {
    pub graph: CallGraph,
    pub ids: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

/// DAG over `f00..fNN` with edges only from lower to higher index; `f00` is the entry.
pub fn random_dag(rng: &mut ChaCha8Rng) -> RandomDag {
    let n = rng.gen_range(2..=12);
    let density = rng.gen_range(0.2..=0.5);
    let ids: Vec<String> = (0..n).map(|i| format!("f{i:02}")).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                edges.push((i, j));
            }
        }
    }
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let edge_refs: Vec<(&str, &str)> = edges
        .iter()
        .map(|&(a, b)| (id_refs[a], id_refs[b]))
        .collect();
    let graph = CallGraph::from_edges(&id_refs, &edge_refs, id_refs[0]).expect("valid graph");
    RandomDag { graph, ids, edges }
}

/// Every path from `from` to `to`, by exhaustive depth-first enumeration.
pub fn all_paths(dag: &RandomDag, from: usize, to: usize) -> Vec<Vec<usize>> {
    fn walk(
        dag: &RandomDag,
        cur: usize,
        to: usize,
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur == to {
            out.push(path.clone());
            return;
        }
        for &(a, b) in &dag.edges {
            if a == cur && !path.contains(&b) {
                path.push(b);
                walk(dag, b, to, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(dag, from, to, &mut vec![from], &mut out);
    out
}

pub fn brute_distance(dag: &RandomDag, from: usize, to: usize) -> Option<usize> {
    all_paths(dag, from, to).iter().map(|p| p.len() - 1).min()
}

/// Shortest entry-to-target path, ties broken by the smallest name sequence.
pub fn brute_fcc(dag: &RandomDag, target: usize) -> Option<Vec<String>> {
    all_paths(dag, 0, target)
        .into_iter()
        .map(|p| p.iter().map(|&i| dag.ids[i].clone()).collect::<Vec<_>>())
        .min_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)))
}

pub fn fid(s: &str) -> FunctionId {
    FunctionId::from(s)
}

/// Graph oracle over `count` random DAGs.
pub fn graph_oracle(count: usize, seed: u64) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deviations = 0usize;
    for case in 0..count {
        let dag = random_dag(&mut rng);
        let g = &dag.graph;
        let n = dag.ids.len();
        for a in 0..n {
            for b in 0..n {
                let got = g
                    .distance(&fid(&dag.ids[a]), &fid(&dag.ids[b]))
                    .map_err(|e| e.to_string())?;
                let want = brute_distance(&dag, a, b).map_or(Distance::Unreachable, Distance::Hops);
                ensure!(
                    got == want,
                    "case {case}: distance {a}->{b} = {got:?}, expected {want:?}"
                );
            }
        }
        for t in 0..n {
            let got = g
                .complete_fcc(&fid(&dag.ids[t]))
                .map_err(|e| e.to_string())?
                .map(|f| {
                    f.functions()
                        .iter()
                        .map(|x| x.0.clone())
                        .collect::<Vec<_>>()
                });
            let want = brute_fcc(&dag, t);
            ensure!(
                got == want,
                "case {case}: fcc to {t} = {got:?}, expected {want:?}"
            );
            let Some(chain) = want else { continue };
            let fcc = g.complete_fcc(&fid(&dag.ids[t])).unwrap().unwrap();
            for _ in 0..4 {
                let len = rng.gen_range(1..=n);
                let trace: Vec<String> = (0..len)
                    .map(|_| dag.ids[rng.gen_range(0..n)].clone())
                    .collect();
                let obs = g.observe(&trace);
                let got = g.deviation(&fcc, &obs);
                let target_name = &dag.ids[t];
                if trace.contains(target_name) {
                    ensure!(
                        matches!(got, Ok(None)),
                        "case {case}: trace reaching target gave {got:?}"
                    );
                    continue;
                }
                let mut best: Option<(usize, &String)> = None;
                for f in &trace {
                    if !chain.contains(f) {
                        continue;
                    }
                    let i = dag.ids.iter().position(|x| x == f).unwrap();
                    let d = brute_distance(&dag, i, t).expect("chain member reaches target");
                    if best.is_none_or(|(bd, _)| d <= bd) {
                        best = Some((d, f));
                    }
                }
                match best {
                    None => ensure!(got.is_err(), "case {case}: disjoint trace gave {got:?}"),
                    Some((d, f)) => {
                        let dev = got.map_err(|e| e.to_string())?.ok_or("deviation missing")?;
                        let pos = chain.iter().position(|x| x == f).unwrap();
                        ensure!(
                            dev.function.0 == *f
                                && dev.distance == d
                                && dev.next_goal.0 == chain[pos + 1],
                            "case {case}: deviation {dev:?}, expected {f} at {d} then {}",
                            chain[pos + 1]
                        );
                        deviations += 1;
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "{count} DAGs, {deviations} deviations checked in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- retrieval

/// Returns a preset vector for the query text `"q"`.
pub struct FixedEmbedder {
    pub dim: usize,
    pub query: Vec<f32>,
}

impl Embedder for FixedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> String {
        "fixed".into()
    }

    fn embed_batch(
        &self,
        texts: &[&str],
    ) -> Result<Vec<Vec<f32>>, dirfuzz::knowledge::KnowledgeError> {
        Ok(texts.iter().map(|_| self.query.clone()).collect())
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        -1.0
    } else {
        dot / (na * nb)
    }
}

/// Vectors drawn from a small integer alphabet so exact ties are frequent.
fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.gen_range(-2i32..=2) as f32).collect()
}

/// Retrieval oracle over `count` random corpora.
pub fn retrieval_oracle(count: usize, seed: u64) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ties = 0usize;
    for case in 0..count {
        let n = rng.gen_range(0..=500);
        let dim = rng.gen_range(1..=8);
        let mut ids: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.gen_range(0..=i));
        }
        let chunks: Vec<Chunk> = ids
            .iter()
            .map(|&id| Chunk {
                id,
                source_path: format!("doc{}.txt", id % 7),
                byte_span: (0, 1),
                text: format!("c{id}"),
                lossy: false,
            })
            .collect();
        let vectors: Vec<Vec<f32>> = (0..n).map(|_| random_vector(&mut rng, dim)).collect();
        let index = EmbeddingIndex::from_parts(dim, vectors.clone(), chunks, "mock".into())
            .map_err(|e| e.to_string())?;
        let embedder = FixedEmbedder {
            dim,
            query: random_vector(&mut rng, dim),
        };
        let k = rng.gen_range(1..=20);
        let got = dirfuzz::knowledge::retrieve_top_k(&index, &embedder, "q", k)
            .map_err(|e| e.to_string())?;
        let mut want: Vec<(usize, f64)> = ids
            .iter()
            .zip(&vectors)
            .map(|(&id, v)| (id, cosine(v, &embedder.query)))
            .collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ties += want.windows(2).take(k).filter(|w| w[0].1 == w[1].1).count();
        want.truncate(k);
        ensure!(
            got.len() == want.len(),
            "case {case}: {} results, expected {}",
            got.len(),
            want.len()
        );
        for (rank, ((c, s), (id, ws))) in got.iter().zip(&want).enumerate() {
            ensure!(
                c.id == *id && (s - ws).abs() <= 1e-9,
                "case {case} rank {rank}: got chunk {} ({s}), expected {id} ({ws})",
                c.id
            );
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "{count} corpora, {ties} ties in the ranked prefixes, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- toy project

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("toys")
        .join("ppmcheck")
}

pub fn ppmcheck_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ppmcheck"))
}

pub fn dirfuzz_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_dirfuzz"))
}

/// Overrides applied to the generated toy config.
#[derive(Debug, Clone)]
pub struct ToyOptions {
    pub graph: Option<String>,
    pub fixture: Option<String>,
    pub opt_budget: &'static str,
    pub trial_budget: &'static str,
    pub refresh: &'static str,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self {
            graph: None,
            fixture: None,
            opt_budget: "60s",
            trial_budget: "1s",
            refresh: "0s",
        }
    }
}

/// Writes a config for the ppmcheck toy into `dir`, with the work directory
/// inside `dir`. Returns the config path.
pub fn write_toy_config(dir: &Path, opts: &ToyOptions) -> PathBuf {
    let toy = toy_dir();
    let graph = match &opts.graph {
        Some(text) => {
            let p = dir.join("graph.txt");
            std::fs::write(&p, text).unwrap();
            p
        }
        None => toy.join("graph.txt"),
    };
    let fixture = match &opts.fixture {
        Some(text) => {
            let p = dir.join("fixture.txt");
            std::fs::write(&p, text).unwrap();
            p
        }
        None => toy.join("fixture.txt"),
    };
    let config = format!(
        "corpus_roots = [{docs:?}, {src:?}]\n\
         graph_file = {graph:?}\n\
         bug_report_file = {bug:?}\n\
         target_binary = {bin:?}\n\
         work_dir = \"work\"\n\
         fixture = {fixture:?}\n\
         rng_seed = 1\n\n\
         [budgets]\n\
         opt = {opt:?}\n\
         trial = {trial:?}\n\
         campaign = \"60s\"\n\
         refresh = {refresh:?}\n\
         exec_timeout = \"1s\"\n",
        docs = toy.join("docs"),
        src = Path::new(env!("CARGO_MANIFEST_DIR")).join("src/bin/ppmcheck.rs"),
        bug = toy.join("bug_report.txt"),
        bin = ppmcheck_bin(),
        opt = opts.opt_budget,
        trial = opts.trial_budget,
        refresh = opts.refresh,
    );
    let path = dir.join("project.toml");
    std::fs::write(&path, config).unwrap();
    path
}

/// Runs ppmcheck on `input` and returns the functions it traced.
pub fn ppmcheck_trace(input: &[u8]) -> (Vec<String>, std::process::ExitStatus) {
    let dir = tempfile::tempdir().unwrap();
    let input_path = dir.path().join("in.ppm");
    let trace_path = dir.path().join("trace.txt");
    std::fs::write(&input_path, input).unwrap();
    let status = std::process::Command::new(ppmcheck_bin())
        .arg(&input_path)
        .env("RF_TRACE_FILE", &trace_path)
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    let trace = std::fs::read_to_string(&trace_path)
        .unwrap_or_default()
        .lines()
        .map(str::to_string)
        .collect();
    (trace, status)
}

/// The 27-byte ppmcheck seed with the given row length.
pub fn ppm_seed(row_len: u32) -> Vec<u8> {
    let mut v = b"P6\n2 2\n255\n".to_vec();
    v.extend_from_slice(&row_len.to_le_bytes());
    v.extend_from_slice(&[0u8; 12]);
    v
}
