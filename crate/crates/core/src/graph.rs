//! Task graphs mined from action sequences, and transition statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::{ClassId, Error, Result};

/// Directed acyclic graph over action classes `0..num_classes` plus a
/// synthetic start node with id `num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraph {
    num_classes: usize,
    edges: BTreeSet<(ClassId, ClassId)>,
    adjacency: Vec<Vec<ClassId>>,
}

impl TaskGraph {
    /// Graph without edges.
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, edges: BTreeSet::new(), adjacency: vec![Vec::new(); num_classes + 1] }
    }

    /// Builds a graph from an explicit edge list, validating range, self-loops
    /// and acyclicity.
    pub fn from_edges<I>(num_classes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ClassId, ClassId)>,
    {
        let mut g = Self::new(num_classes);
        for (u, v) in edges {
            g.check_node(u)?;
            g.check_node(v)?;
            if u == v {
                return Err(Error::Config(alloc::format!("self-loop on node {u}")));
            }
            if !g.try_add_edge(u, v) {
                return Err(Error::Config(alloc::format!("edge ({u}, {v}) closes a cycle")));
            }
        }
        Ok(g)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn start_node(&self) -> ClassId {
        self.num_classes as ClassId
    }

    /// Number of nodes including the start node.
    pub fn node_count(&self) -> usize {
        self.num_classes + 1
    }

    pub fn edges(&self) -> impl ExactSizeIterator<Item = (ClassId, ClassId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, u: ClassId, v: ClassId) -> bool {
        self.edges.contains(&(u, v))
    }

    pub fn contains_node(&self, node: ClassId) -> bool {
        (node as usize) < self.node_count()
    }

    fn check_node(&self, node: ClassId) -> Result<()> {
        if self.contains_node(node) {
            Ok(())
        } else {
            Err(Error::InvalidNode { node, nodes: self.node_count() })
        }
    }

    /// Direct successors `A[node]`, ascending.
    pub fn successors(&self, node: ClassId) -> Result<&[ClassId]> {
        self.check_node(node)?;
        Ok(&self.adjacency[node as usize])
    }

    /// Like [`successors`](Self::successors) but empty for unknown nodes.
    pub fn successors_or_empty(&self, node: ClassId) -> &[ClassId] {
        self.adjacency.get(node as usize).map_or(&[], Vec::as_slice)
    }

    pub fn out_degree(&self, node: ClassId) -> usize {
        self.successors_or_empty(node).len()
    }

    /// `a` and `b` are joined by an edge in either direction.
    pub fn connected(&self, a: ClassId, b: ClassId) -> bool {
        self.has_edge(a, b) || self.has_edge(b, a)
    }

    /// True when `node` is in range and touches at least one edge.
    pub fn is_incident(&self, node: ClassId) -> bool {
        self.contains_node(node)
            && (!self.adjacency[node as usize].is_empty() || self.edges.iter().any(|&(_, v)| v == node))
    }

    /// Predecessors of every node.
    pub fn predecessors(&self) -> Vec<Vec<ClassId>> {
        let mut preds = vec![Vec::new(); self.node_count()];
        for &(u, v) in &self.edges {
            preds[v as usize].push(u);
        }
        preds
    }

    fn reaches(&self, from: ClassId, to: ClassId) -> bool {
        let mut seen = vec![false; self.node_count()];
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if core::mem::replace(&mut seen[n as usize], true) {
                continue;
            }
            stack.extend(self.adjacency[n as usize].iter().copied());
        }
        false
    }

    /// Adds `(u, v)` unless it would close a cycle. Returns whether the edge is
    /// present afterwards.
    fn try_add_edge(&mut self, u: ClassId, v: ClassId) -> bool {
        if self.has_edge(u, v) {
            return true;
        }
        if u == v || self.reaches(v, u) {
            return false;
        }
        self.edges.insert((u, v));
        let succ = &mut self.adjacency[u as usize];
        let pos = succ.binary_search(&v).unwrap_err();
        succ.insert(pos, v);
        true
    }

    /// Kahn's algorithm; true when every node can be ordered.
    pub fn is_acyclic(&self) -> bool {
        let mut indeg = vec![0usize; self.node_count()];
        for &(_, v) in &self.edges {
            indeg[v as usize] += 1;
        }
        let mut queue: Vec<usize> = (0..indeg.len()).filter(|&i| indeg[i] == 0).collect();
        let mut visited = 0;
        while let Some(n) = queue.pop() {
            visited += 1;
            for &s in &self.adjacency[n] {
                indeg[s as usize] -= 1;
                if indeg[s as usize] == 0 {
                    queue.push(s as usize);
                }
            }
        }
        visited == indeg.len()
    }

    /// Action nodes having at least one predecessor (other than the start
    /// node) with more than one successor.
    pub fn non_deterministic_nodes(&self) -> BTreeSet<ClassId> {
        let start = self.start_node();
        self.edges.iter().filter(|&&(u, _)| u != start && self.out_degree(u) > 1).map(|&(_, v)| v).collect()
    }
}

/// Pair weights used by [`build_task_graph`]: for every sequence (with the
/// start node prepended) and every `i < j`, `(seq[i], seq[j])` gains one,
/// skipping `u == v`.
pub fn pair_weights(sequences: &[Vec<ClassId>], num_classes: usize) -> Result<BTreeMap<(ClassId, ClassId), u64>> {
    let start = num_classes as ClassId;
    let mut weights = BTreeMap::new();
    for seq in sequences {
        if let Some(&bad) = seq.iter().find(|&&c| c as usize >= num_classes) {
            return Err(Error::InvalidNode { node: bad, nodes: num_classes });
        }
        let full: Vec<ClassId> = core::iter::once(start).chain(seq.iter().copied()).collect();
        for (i, &u) in full.iter().enumerate() {
            for &v in &full[i + 1..] {
                if u != v {
                    *weights.entry((u, v)).or_insert(0) += 1;
                }
            }
        }
    }
    Ok(weights)
}

/// Greedy maximum-weight DAG: candidate edges are visited by descending weight
/// (ties in lexicographic `(u, v)` order) and kept when they leave the graph
/// acyclic.
pub fn build_task_graph(sequences: &[Vec<ClassId>], num_classes: usize) -> Result<TaskGraph> {
    let weights = pair_weights(sequences, num_classes)?;
    let mut ranked: Vec<((ClassId, ClassId), u64)> = weights.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut graph = TaskGraph::new(num_classes);
    for ((u, v), _) in ranked {
        graph.try_add_edge(u, v);
    }
    Ok(graph)
}

/// Adjacent-pair transition counts and their row-normalized probabilities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionStats {
    pub counts: BTreeMap<(ClassId, ClassId), u64>,
    pub probs: BTreeMap<ClassId, BTreeMap<ClassId, f64>>,
}

impl TransitionStats {
    /// Highest outgoing probability of `node`, if it has any transitions.
    pub fn max_prob(&self, node: ClassId) -> Option<f64> {
        self.probs.get(&node).map(|row| row.values().copied().fold(0.0, f64::max))
    }
}

pub fn transition_stats(sequences: &[Vec<ClassId>]) -> TransitionStats {
    let mut counts: BTreeMap<(ClassId, ClassId), u64> = BTreeMap::new();
    for seq in sequences {
        for w in seq.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }
    let mut totals: BTreeMap<ClassId, u64> = BTreeMap::new();
    for (&(u, _), &c) in &counts {
        *totals.entry(u).or_insert(0) += c;
    }
    let mut probs: BTreeMap<ClassId, BTreeMap<ClassId, f64>> = BTreeMap::new();
    for (&(u, v), &c) in &counts {
        probs.entry(u).or_default().insert(v, c as f64 / totals[&u] as f64);
    }
    TransitionStats { counts, probs }
}

/// How often a task offers several valid next actions.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NonDeterminismMetrics {
    pub non_deterministic_ratio: f64,
    pub avg_valid_next: f64,
    pub avg_max_transfer_prob: f64,
}

/// Non-determinism metrics over the action nodes that touch an edge.
///
/// The start node is excluded both as a counted node and as a predecessor.
pub fn graph_metrics(graph: &TaskGraph, stats: &TransitionStats) -> NonDeterminismMetrics {
    let start = graph.start_node();
    let mut present: BTreeSet<ClassId> = BTreeSet::new();
    for (u, v) in graph.edges() {
        if u != start {
            present.insert(u);
        }
        present.insert(v);
    }
    let nondet = graph.non_deterministic_nodes();
    let non_deterministic_ratio = if present.is_empty() {
        0.0
    } else {
        present.iter().filter(|n| nondet.contains(n)).count() as f64 / present.len() as f64
    };
    let degrees: Vec<usize> = present.iter().map(|&n| graph.out_degree(n)).filter(|&d| d > 0).collect();
    let avg_valid_next =
        if degrees.is_empty() { 0.0 } else { degrees.iter().sum::<usize>() as f64 / degrees.len() as f64 };
    let maxes: Vec<f64> = stats.probs.keys().filter_map(|&u| stats.max_prob(u)).collect();
    let avg_max_transfer_prob = if maxes.is_empty() { 0.0 } else { maxes.iter().sum::<f64>() / maxes.len() as f64 };
    NonDeterminismMetrics { non_deterministic_ratio, avg_valid_next, avg_max_transfer_prob }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_empty_graph() {
        let g = build_task_graph(&[], 0).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.start_node(), 0);
    }

    #[test]
    fn greedy_trace() {
        // start = 3; class weights (0,1)=2, (0,2)=2, (1,2)=1, (2,1)=1
        let g = build_task_graph(&[vec![0, 1, 2], vec![0, 2, 1]], 3).unwrap();
        let w = pair_weights(&[vec![0, 1, 2], vec![0, 2, 1]], 3).unwrap();
        assert_eq!(w[&(0, 1)], 2);
        assert_eq!(w[&(0, 2)], 2);
        assert_eq!(w[&(1, 2)], 1);
        assert_eq!(w[&(2, 1)], 1);
        assert!(g.has_edge(0, 1) && g.has_edge(0, 2) && g.has_edge(1, 2));
        assert!(!g.has_edge(2, 1));
        assert!(g.has_edge(3, 0));
        assert!(g.is_acyclic());
    }

    #[test]
    fn out_of_range_labels_rejected() {
        assert!(matches!(build_task_graph(&[vec![0, 5]], 3), Err(Error::InvalidNode { node: 5, .. })));
    }

    #[test]
    fn successors_and_errors() {
        let g = TaskGraph::from_edges(3, [(0, 1), (0, 2)]).unwrap();
        assert_eq!(g.successors(0).unwrap(), &[1, 2]);
        assert!(g.successors(2).unwrap().is_empty());
        assert!(g.successors(9).is_err());
        assert!(g.successors_or_empty(9).is_empty());
    }

    #[test]
    fn from_edges_rejects_cycles_and_loops() {
        assert!(TaskGraph::from_edges(3, [(0, 1), (1, 0)]).is_err());
        assert!(TaskGraph::from_edges(3, [(1, 1)]).is_err());
        assert!(TaskGraph::from_edges(3, [(0, 7)]).is_err());
    }

    #[test]
    fn stats_single_successor() {
        let s = transition_stats(&[vec![0, 1], vec![0, 1]]);
        assert_eq!(s.probs[&0][&1], 1.0);
    }

    #[test]
    fn stats_max_transfer_probability() {
        let mut seqs = Vec::new();
        for (next, n) in [(1, 20), (2, 25), (3, 55)] {
            for _ in 0..n {
                seqs.push(vec![0, next]);
            }
        }
        let s = transition_stats(&seqs);
        assert!((s.max_prob(0).unwrap() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn chain_metrics() {
        let g = TaskGraph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let s = transition_stats(&[vec![0, 1, 2]]);
        let m = graph_metrics(&g, &s);
        assert_eq!(m.non_deterministic_ratio, 0.0);
        assert_eq!(m.avg_valid_next, 1.0);
        assert_eq!(m.avg_max_transfer_prob, 1.0);
    }

    #[test]
    fn star_metrics() {
        let g = TaskGraph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(g.non_deterministic_nodes(), [1, 2, 3].into_iter().collect());
        let s = transition_stats(&[vec![0, 1], vec![0, 2], vec![0, 3]]);
        assert!((s.max_prob(0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let m = graph_metrics(&g, &s);
        assert_eq!(m.non_deterministic_ratio, 0.75);
        assert_eq!(m.avg_valid_next, 3.0);
    }
}
