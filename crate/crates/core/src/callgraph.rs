//! Static call-graph structure and reachability queries.
//!
//! Graph files are line oriented:
//!
//! ```text
//! # comment
//! node E main main.c
//! node A read_header ppm.c
//! edge E A
//! entry E
//! unresolved A fnptr@ppm.c:88
//! ```
//!
//! Distances are edge counts along caller→callee edges. Calls that an external
//! extractor could not resolve (function pointers and the like) are kept as
//! annotations and never turned into edges.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FunctionId(pub String);

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FunctionId {
    fn from(s: &str) -> Self {
        FunctionId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionNode {
    pub name: String,
    pub source_file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedCall {
    pub caller: FunctionId,
    pub site: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("no entry declared")]
    NoEntry,
    #[error("unknown function id {0}")]
    UnknownFunction(FunctionId),
    #[error("invalid call chain: {0}")]
    InvalidFcc(String),
    #[error("trace shares no function with the call chain")]
    DisjointTrace,
    #[error("empty trace")]
    EmptyTrace,
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraph {
    nodes: BTreeMap<FunctionId, FunctionNode>,
    callees: BTreeMap<FunctionId, BTreeSet<FunctionId>>,
    callers: BTreeMap<FunctionId, BTreeSet<FunctionId>>,
    entry: FunctionId,
    unresolved: Vec<UnresolvedCall>,
}

/// Edge-count distance. `Unreachable` is a distinct outcome, not a large number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Distance {
    Hops(usize),
    Unreachable,
}

impl Distance {
    pub fn hops(self) -> Option<usize> {
        match self {
            Distance::Hops(n) => Some(n),
            Distance::Unreachable => None,
        }
    }
}

impl CallGraph {
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut nodes = BTreeMap::new();
        let mut edges = Vec::new();
        let mut entry = None;
        let mut unresolved = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |reason: &str| GraphError::Syntax {
                line,
                reason: reason.to_string(),
            };
            let parts: Vec<&str> = content.split_whitespace().collect();
            match parts[0] {
                "node" => {
                    let [_, id, name, file] = parts[..] else {
                        return Err(syntax("expected `node <id> <name> <file>`"));
                    };
                    let prev = nodes.insert(
                        FunctionId::from(id),
                        FunctionNode {
                            name: name.to_string(),
                            source_file: file.to_string(),
                        },
                    );
                    if prev.is_some() {
                        return Err(syntax(&format!("node {id} declared twice")));
                    }
                }
                "edge" => {
                    let [_, from, to] = parts[..] else {
                        return Err(syntax("expected `edge <caller-id> <callee-id>`"));
                    };
                    edges.push((line, FunctionId::from(from), FunctionId::from(to)));
                }
                "entry" => {
                    let [_, id] = parts[..] else {
                        return Err(syntax("expected `entry <id>`"));
                    };
                    if entry.is_some() {
                        return Err(syntax("entry declared twice"));
                    }
                    entry = Some((line, FunctionId::from(id)));
                }
                "unresolved" => {
                    if parts.len() < 3 {
                        return Err(syntax("expected `unresolved <caller-id> <site-label>`"));
                    }
                    unresolved.push((line, FunctionId::from(parts[1]), parts[2..].join(" ")));
                }
                other => return Err(syntax(&format!("unknown directive {other:?}"))),
            }
        }
        let check = |line: usize, id: &FunctionId| {
            if nodes.contains_key(id) {
                Ok(())
            } else {
                Err(GraphError::Syntax {
                    line,
                    reason: format!("undeclared node {id}"),
                })
            }
        };
        let (entry_line, entry) = entry.ok_or(GraphError::NoEntry)?;
        check(entry_line, &entry)?;
        let mut callees: BTreeMap<FunctionId, BTreeSet<FunctionId>> = BTreeMap::new();
        let mut callers: BTreeMap<FunctionId, BTreeSet<FunctionId>> = BTreeMap::new();
        for (line, from, to) in edges {
            check(line, &from)?;
            check(line, &to)?;
            callees.entry(from.clone()).or_default().insert(to.clone());
            callers.entry(to).or_default().insert(from);
        }
        let mut annotations = Vec::new();
        for (line, caller, site) in unresolved {
            check(line, &caller)?;
            annotations.push(UnresolvedCall { caller, site });
        }
        Ok(Self {
            nodes,
            callees,
            callers,
            entry,
            unresolved: annotations,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GraphError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Builds a graph directly; node names default to their ids.
    pub fn from_edges(
        ids: &[&str],
        edges: &[(&str, &str)],
        entry: &str,
    ) -> Result<Self, GraphError> {
        let mut text = String::new();
        for id in ids {
            text.push_str(&format!("node {id} {id} -\n"));
        }
        for (a, b) in edges {
            text.push_str(&format!("edge {a} {b}\n"));
        }
        text.push_str(&format!("entry {entry}\n"));
        Self::parse(&text)
    }

    pub fn entry(&self) -> &FunctionId {
        &self.entry
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.callees.values().map(BTreeSet::len).sum()
    }

    pub fn contains(&self, id: &FunctionId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &FunctionId) -> Option<&FunctionNode> {
        self.nodes.get(id)
    }

    pub fn name<'a>(&'a self, id: &'a FunctionId) -> &'a str {
        self.nodes.get(id).map(|n| n.name.as_str()).unwrap_or(&id.0)
    }

    pub fn ids(&self) -> impl Iterator<Item = &FunctionId> {
        self.nodes.keys()
    }

    pub fn has_edge(&self, from: &FunctionId, to: &FunctionId) -> bool {
        self.callees.get(from).is_some_and(|s| s.contains(to))
    }

    pub fn callees(&self, id: &FunctionId) -> impl Iterator<Item = &FunctionId> {
        self.callees.get(id).into_iter().flatten()
    }

    pub fn unresolved(&self) -> &[UnresolvedCall] {
        &self.unresolved
    }

    /// Resolves a function name (as written in traces) to its id. When several
    /// nodes share a name the smallest id wins.
    pub fn id_by_name(&self, name: &str) -> Option<&FunctionId> {
        self.nodes
            .iter()
            .find(|(_, n)| n.name == name)
            .map(|(id, _)| id)
    }

    /// Resolves either an id or a function name.
    pub fn resolve(&self, key: &str) -> Option<FunctionId> {
        let id = FunctionId::from(key);
        if self.contains(&id) {
            return Some(id);
        }
        self.id_by_name(key).cloned()
    }

    fn require(&self, id: &FunctionId) -> Result<(), GraphError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(GraphError::UnknownFunction(id.clone()))
        }
    }

    /// Maps trace lines (function names) onto graph ids, dropping unknown names.
    pub fn observe<S: AsRef<str>>(&self, names: &[S]) -> TraceObservation {
        let mut reached = Vec::new();
        for n in names {
            match self.id_by_name(n.as_ref()) {
                Some(id) => reached.push(id.clone()),
                None => log::warn!("trace names unknown function {:?}; dropped", n.as_ref()),
            }
        }
        TraceObservation { reached }
    }

    /// Breadth-first distances from every node to `to` (reverse edges).
    pub fn distances_to(&self, to: &FunctionId) -> BTreeMap<FunctionId, usize> {
        let mut dist = BTreeMap::new();
        if !self.contains(to) {
            return dist;
        }
        dist.insert(to.clone(), 0);
        let mut queue = VecDeque::from([to.clone()]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[&cur];
            for caller in self.callers.get(&cur).into_iter().flatten() {
                if !dist.contains_key(caller) {
                    dist.insert(caller.clone(), d + 1);
                    queue.push_back(caller.clone());
                }
            }
        }
        dist
    }

    pub fn distance(&self, from: &FunctionId, to: &FunctionId) -> Result<Distance, GraphError> {
        self.require(from)?;
        self.require(to)?;
        let mut seen = BTreeSet::from([from.clone()]);
        let mut queue = VecDeque::from([(from.clone(), 0usize)]);
        while let Some((cur, d)) = queue.pop_front() {
            if &cur == to {
                return Ok(Distance::Hops(d));
            }
            for next in self.callees(&cur) {
                if seen.insert(next.clone()) {
                    queue.push_back((next.clone(), d + 1));
                }
            }
        }
        Ok(Distance::Unreachable)
    }

    /// Shortest path `from` → `to`; among equally short paths the one whose
    /// sequence of function names is lexicographically smallest.
    pub fn shortest_path(
        &self,
        from: &FunctionId,
        to: &FunctionId,
    ) -> Result<Option<Fcc>, GraphError> {
        self.require(from)?;
        self.require(to)?;
        let dist = self.distances_to(to);
        let Some(&total) = dist.get(from) else {
            return Ok(None);
        };
        let mut path = vec![from.clone()];
        let mut cur = from.clone();
        for step in (0..total).rev() {
            let next = self
                .callees(&cur)
                .filter(|c| dist.get(*c) == Some(&step))
                .min_by(|a, b| self.name(a).cmp(self.name(b)).then_with(|| a.cmp(b)))
                .expect("BFS layer has a successor")
                .clone();
            path.push(next.clone());
            cur = next;
        }
        Ok(Some(Fcc::new(self, path)?))
    }

    /// Entry → target chain, or `None` when the target is unreachable from entry.
    pub fn complete_fcc(&self, target: &FunctionId) -> Result<Option<Fcc>, GraphError> {
        self.require(target)?;
        self.shortest_path(&self.entry.clone(), target)
    }

    /// Direct callers of `target`, ordered by name.
    pub fn neighbors(&self, target: &FunctionId) -> Result<Vec<FunctionId>, GraphError> {
        self.require(target)?;
        let mut v: Vec<FunctionId> = self
            .callers
            .get(target)
            .into_iter()
            .flatten()
            .filter(|c| *c != target)
            .cloned()
            .collect();
        v.sort_by(|a, b| self.name(a).cmp(self.name(b)).then_with(|| a.cmp(b)));
        Ok(v)
    }

    /// How the target can be approached: a complete chain, only via direct
    /// callers, or not at all.
    pub fn reachability(&self, target: &FunctionId) -> Result<Reachability, GraphError> {
        if let Some(fcc) = self.complete_fcc(target)? {
            return Ok(Reachability::Chain(fcc));
        }
        let n = self.neighbors(target)?;
        Ok(if n.is_empty() {
            Reachability::Isolated
        } else {
            Reachability::NeighborsOnly(n)
        })
    }

    /// Finds the trace function on `fcc` closest to the chain's target and the
    /// chain function that should be reached next.
    pub fn deviation(
        &self,
        fcc: &Fcc,
        trace: &TraceObservation,
    ) -> Result<Option<Deviation>, GraphError> {
        if trace.reached.is_empty() {
            return Err(GraphError::EmptyTrace);
        }
        let target = fcc.target();
        if trace.reached.contains(target) {
            return Ok(None);
        }
        let dist = self.distances_to(target);
        let mut best: Option<(usize, &FunctionId)> = None;
        // Later occurrences win ties: `<=` keeps overwriting.
        for f in &trace.reached {
            if !fcc.contains(f) {
                continue;
            }
            let d = dist[f];
            if best.is_none_or(|(bd, _)| d <= bd) {
                best = Some((d, f));
            }
        }
        let (distance, function) = best.ok_or(GraphError::DisjointTrace)?;
        let next_goal = fcc
            .successor(function)
            .expect("non-target chain member has a successor");
        Ok(Some(Deviation {
            function: function.clone(),
            next_goal: next_goal.clone(),
            distance,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reachability {
    Chain(Fcc),
    NeighborsOnly(Vec<FunctionId>),
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deviation {
    pub function: FunctionId,
    pub next_goal: FunctionId,
    /// Edge count from the deviation function to the chain's target.
    pub distance: usize,
}

/// Function call chain: a simple caller→callee path ending at the target.
/// Chains from [`CallGraph::complete_fcc`] start at the entry; chains handed
/// off from a reached neighbor start at that neighbor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fcc {
    functions: Vec<FunctionId>,
}

impl Fcc {
    pub fn new(g: &CallGraph, functions: Vec<FunctionId>) -> Result<Self, GraphError> {
        if functions.is_empty() {
            return Err(GraphError::InvalidFcc("empty chain".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &functions {
            g.require(f)?;
            if !seen.insert(f) {
                return Err(GraphError::InvalidFcc(format!("{f} repeated")));
            }
        }
        for w in functions.windows(2) {
            if !g.has_edge(&w[0], &w[1]) {
                return Err(GraphError::InvalidFcc(format!(
                    "no edge {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { functions })
    }

    pub fn functions(&self) -> &[FunctionId] {
        &self.functions
    }

    pub fn start(&self) -> &FunctionId {
        &self.functions[0]
    }

    pub fn target(&self) -> &FunctionId {
        self.functions.last().expect("non-empty")
    }

    pub fn contains(&self, f: &FunctionId) -> bool {
        self.functions.contains(f)
    }

    pub fn successor(&self, f: &FunctionId) -> Option<&FunctionId> {
        let i = self.functions.iter().position(|x| x == f)?;
        self.functions.get(i + 1)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceObservation {
    pub reached: Vec<FunctionId>,
}

impl TraceObservation {
    pub fn contains(&self, f: &FunctionId) -> bool {
        self.reached.contains(f)
    }
}
