//! Connected-subgraph enumeration, random cycle breaking and topological
//! execution order.

use crate::dep_graph::{DependencyEdge, DependencyGraph};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("cycle through {0:?} survived cycle breaking")]
    Cycle(Vec<String>),
    #[error("max_nodes must be at least 1")]
    InvalidMaxNodes,
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphTask {
    /// Execution order.
    pub nodes: Vec<String>,
    pub retained_edges: Vec<DependencyEdge>,
    pub dropped_edges: Vec<DependencyEdge>,
    pub seed: u64,
}

impl SubgraphTask {
    pub fn position(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    /// Retained edges whose destination is `node`, in edge order.
    pub fn incoming<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a DependencyEdge> + 'a {
        self.retained_edges.iter().filter(move |e| e.dst == node)
    }
}

struct Undirected {
    names: Vec<String>,
    adj: Vec<BTreeSet<usize>>,
}

impl Undirected {
    fn new(nodes: &[String], edges: &[&DependencyEdge]) -> Self {
        let names: Vec<String> = nodes.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut adj = vec![BTreeSet::new(); names.len()];
        for e in edges {
            if let (Some(&a), Some(&b)) = (index.get(e.src.as_str()), index.get(e.dst.as_str())) {
                if a != b {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
        }
        Self { names, adj }
    }

    /// ESU: every connected vertex set of size `<= k` exactly once, grown
    /// from its smallest vertex.
    fn extend(&self, sub: &mut Vec<usize>, ext: BTreeSet<usize>, anchor: usize, k: usize, out: &mut Vec<Vec<usize>>) {
        out.push(sub.clone());
        if sub.len() == k {
            return;
        }
        let mut ext = ext;
        while let Some(w) = ext.pop_first() {
            let mut next = ext.clone();
            for &u in &self.adj[w] {
                let exclusive = u > anchor && !sub.contains(&u) && sub.iter().all(|s| !self.adj[*s].contains(&u));
                if exclusive {
                    next.insert(u);
                }
            }
            sub.push(w);
            self.extend(sub, next, anchor, k, out);
            sub.pop();
        }
    }
}

/// All node sets of size `1..=l_max` that are connected in the underlying
/// undirected graph of `g`'s fully validated edges, sorted by (size, names).
pub fn enumerate_connected(g: &DependencyGraph, l_max: usize) -> Vec<Vec<String>> {
    let edges: Vec<&DependencyEdge> = g.final_edges().collect();
    enumerate_over(&g.nodes, &edges, l_max)
}

pub fn enumerate_over(nodes: &[String], edges: &[&DependencyEdge], l_max: usize) -> Vec<Vec<String>> {
    if l_max == 0 {
        return Vec::new();
    }
    let graph = Undirected::new(nodes, edges);
    let mut sets: Vec<Vec<String>> = (0..graph.names.len())
        .into_par_iter()
        .flat_map_iter(|v| {
            let ext = graph.adj[v].iter().copied().filter(|&u| u > v).collect();
            let mut out = Vec::new();
            graph.extend(&mut vec![v], ext, v, l_max, &mut out);
            out.into_iter().map(|set| {
                let mut names: Vec<String> = set.into_iter().map(|i| graph.names[i].clone()).collect();
                names.sort();
                names
            })
        })
        .collect();
    sets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    sets
}

fn find_cycle<'a>(nodes: &[String], edges: &[&'a DependencyEdge]) -> Option<Vec<&'a DependencyEdge>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit<'a>(
        v: &str,
        out: &BTreeMap<&str, Vec<&'a DependencyEdge>>,
        marks: &mut BTreeMap<String, Mark>,
        path: &mut Vec<&'a DependencyEdge>,
    ) -> Option<Vec<&'a DependencyEdge>> {
        marks.insert(v.to_string(), Mark::Active);
        for e in out.get(v).into_iter().flatten() {
            match marks.get(e.dst.as_str()).copied().unwrap_or(Mark::New) {
                Mark::Active => {
                    let start = path.iter().position(|p| p.src == e.dst).unwrap_or(path.len());
                    let mut cycle = path[start..].to_vec();
                    cycle.push(e);
                    return Some(cycle);
                }
                Mark::New => {
                    path.push(e);
                    if let Some(c) = visit(&e.dst, out, marks, path) {
                        return Some(c);
                    }
                    path.pop();
                }
                Mark::Done => {}
            }
        }
        marks.insert(v.to_string(), Mark::Done);
        None
    }

    let mut out: BTreeMap<&str, Vec<&DependencyEdge>> = BTreeMap::new();
    for e in edges.iter().filter(|e| e.src != e.dst) {
        out.entry(e.src.as_str()).or_default().push(e);
    }
    let mut marks: BTreeMap<String, Mark> = BTreeMap::new();
    let mut sorted: Vec<&String> = nodes.iter().collect();
    sorted.sort();
    for v in sorted {
        if marks.get(v.as_str()).copied().unwrap_or(Mark::New) == Mark::New {
            if let Some(c) = visit(v, &out, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// Drops uniformly random edges of detected cycles until none remain.
/// Acyclic input comes back unchanged.
pub fn break_cycles(
    nodes: &[String],
    edges: &[DependencyEdge],
    rng: &mut ChaCha8Rng,
) -> (Vec<DependencyEdge>, Vec<DependencyEdge>) {
    let mut retained: Vec<DependencyEdge> = edges.to_vec();
    let mut dropped = Vec::new();
    loop {
        let refs: Vec<&DependencyEdge> = retained.iter().collect();
        let Some(cycle) = find_cycle(nodes, &refs) else { break };
        let victim = cycle.choose(rng).expect("cycles are non-empty").id();
        let at = retained.iter().position(|e| e.id() == victim).expect("victim is retained");
        dropped.push(retained.remove(at));
    }
    dropped.sort_by_key(DependencyEdge::id);
    (retained, dropped)
}

/// Kahn's algorithm; ready nodes leave in lexicographic order.
pub fn topo_order(nodes: &[String], retained: &[DependencyEdge]) -> Result<Vec<String>, SamplerError> {
    let mut indegree: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    for e in retained {
        *indegree.entry(e.dst.as_str()).or_default() += 1;
        indegree.entry(e.src.as_str()).or_default();
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(n) = ready.pop_first() {
        order.push(n.to_string());
        for e in retained.iter().filter(|e| e.src == n) {
            let d = indegree.get_mut(e.dst.as_str()).expect("every endpoint is counted");
            *d -= 1;
            if *d == 0 {
                ready.insert(e.dst.as_str());
            }
        }
    }
    if order.len() < indegree.len() {
        let stuck = indegree.iter().filter(|(_, d)| **d > 0).map(|(n, _)| n.to_string()).collect();
        return Err(SamplerError::Cycle(stuck));
    }
    Ok(order)
}

/// Seed for one node set, derived from the run seed so a task replays alone.
pub fn task_seed(seed: u64, nodes: &[String]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for n in nodes {
        h.update(n.as_bytes());
        h.update([0]);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub max_nodes: usize,
    /// Keep at most this many node sets per size, chosen with the run seed.
    pub cap_per_size: Option<usize>,
    pub seed: u64,
}

pub fn build_task(nodes: &[String], edges: &[DependencyEdge], seed: u64) -> Result<SubgraphTask, SamplerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (retained, dropped) = break_cycles(nodes, edges, &mut rng);
    let order = topo_order(nodes, &retained)?;
    Ok(SubgraphTask { nodes: order, retained_edges: retained, dropped_edges: dropped, seed })
}

pub fn sample_tasks(g: &DependencyGraph, config: &SamplerConfig) -> Result<Vec<SubgraphTask>, SamplerError> {
    if config.max_nodes == 0 {
        return Err(SamplerError::InvalidMaxNodes);
    }
    let mut sets = enumerate_connected(g, config.max_nodes);
    if let Some(cap) = config.cap_per_size {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut by_size: BTreeMap<usize, Vec<Vec<String>>> = BTreeMap::new();
        for s in sets {
            by_size.entry(s.len()).or_default().push(s);
        }
        sets = by_size
            .into_values()
            .flat_map(|group| {
                let mut picked: Vec<Vec<String>> = group.choose_multiple(&mut rng, cap).cloned().collect();
                picked.sort();
                picked
            })
            .collect();
    }
    let final_edges: Vec<&DependencyEdge> = g.final_edges().collect();
    sets.par_iter()
        .map(|set| {
            let members: BTreeSet<&str> = set.iter().map(String::as_str).collect();
            let induced: Vec<DependencyEdge> = final_edges
                .iter()
                .filter(|e| members.contains(e.src.as_str()) && members.contains(e.dst.as_str()))
                .map(|e| (*e).clone())
                .collect();
            build_task(set, &induced, task_seed(config.seed, set))
        })
        .collect()
}

pub fn write_tasks(path: impl AsRef<Path>, tasks: &[SubgraphTask]) -> std::io::Result<()> {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&serde_json::to_string(t).expect("tasks serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn read_tasks(path: impl AsRef<Path>) -> Result<Vec<SubgraphTask>, SamplerError> {
    let raw = std::fs::read_to_string(path)?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SamplerError::Schema { line: i + 1, message: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dep_graph::EdgeStage;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn edge(src: &str, dst: &str) -> DependencyEdge {
        DependencyEdge { stage: EdgeStage::PassedExecution, justification: "j".into(), ..DependencyEdge::new(src, dst, 0) }
    }

    #[test]
    fn path_enumeration() {
        let g = DependencyGraph { nodes: names(&["A", "B", "C"]), edges: vec![edge("A", "B"), edge("B", "C")] };
        let two = enumerate_connected(&g, 2);
        assert_eq!(two, vec![names(&["A"]), names(&["B"]), names(&["C"]), names(&["A", "B"]), names(&["B", "C"])]);
        assert_eq!(enumerate_connected(&g, 4).len(), 6);
        let iso = DependencyGraph { nodes: names(&["A", "B", "X"]), edges: vec![edge("A", "B")] };
        let with_x: Vec<_> = enumerate_connected(&iso, 4).into_iter().filter(|s| s.contains(&"X".to_string())).collect();
        assert_eq!(with_x, vec![names(&["X"])]);
    }

    #[test]
    fn two_cycle_loses_exactly_one_edge() {
        let nodes = names(&["A", "B"]);
        let edges = vec![edge("A", "B"), edge("B", "A")];
        let (kept, dropped) = break_cycles(&nodes, &edges, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!((kept.len(), dropped.len()), (1, 1));
        assert!(topo_order(&nodes, &kept).is_ok());
        let again = break_cycles(&nodes, &edges, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(again, (kept, dropped));
    }

    #[test]
    fn acyclic_input_is_untouched() {
        let nodes = names(&["A", "B", "C"]);
        let edges = vec![edge("A", "B"), edge("B", "C")];
        let (kept, dropped) = break_cycles(&nodes, &edges, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(kept, edges);
        assert!(dropped.is_empty());
    }

    #[test]
    fn topo_tie_breaks() {
        assert_eq!(topo_order(&names(&["C", "B", "A"]), &[edge("A", "B"), edge("B", "C")]).unwrap(), names(&["A", "B", "C"]));
        let diamond = [edge("A", "B"), edge("A", "C"), edge("B", "D"), edge("C", "D")];
        assert_eq!(topo_order(&names(&["D", "C", "B", "A"]), &diamond).unwrap(), names(&["A", "B", "C", "D"]));
        assert_eq!(topo_order(&names(&["Z", "A"]), &[]).unwrap(), names(&["A", "Z"]));
        assert!(matches!(topo_order(&names(&["A", "B"]), &[edge("A", "B"), edge("B", "A")]), Err(SamplerError::Cycle(_))));
    }

    #[test]
    fn per_size_cap_is_seeded() {
        let g = DependencyGraph {
            nodes: names(&["A", "B", "C", "D"]),
            edges: vec![edge("A", "B"), edge("B", "C"), edge("C", "D")],
        };
        let cfg = SamplerConfig { max_nodes: 4, cap_per_size: Some(2), seed: 3 };
        let a = sample_tasks(&g, &cfg).unwrap();
        assert_eq!(a.len(), 2 + 2 + 2 + 1);
        assert_eq!(a, sample_tasks(&g, &cfg).unwrap());
    }
}
