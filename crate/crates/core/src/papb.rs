//! Valid-next-action prediction from a noisy executed sequence.
//!
//! A dynamic program finds every longest subsequence of the executed labels
//! whose consecutive elements are joined by a task-graph edge (in either
//! direction). The nodes of those subsequences form the matched set `s*`, and
//! the candidates are the successors of `s*` that are not already in it.
//! Labels the graph does not know simply never connect.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::TaskGraph;
use crate::ClassId;

/// Per-index DP tables: `dp[i]` is the length of the longest connected
/// subsequence ending at index `i`, `subseq[i]` holds every such subsequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpState {
    pub dp: Vec<usize>,
    pub subseq: Vec<BTreeSet<Vec<ClassId>>>,
}

impl DpState {
    pub fn max_len(&self) -> usize {
        self.dp.iter().copied().max().unwrap_or(0)
    }
}

/// Result of matching an executed sequence against a task graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResultSet {
    /// All maximum-length connected subsequences.
    pub longest: BTreeSet<Vec<ClassId>>,
    /// Groups of `longest` merged through shared or adjacent nodes.
    pub components: Vec<BTreeSet<ClassId>>,
    pub s_star: BTreeSet<ClassId>,
    pub candidates: BTreeSet<ClassId>,
    /// Candidates came from the start node because nothing matched.
    pub seeded: bool,
}

/// Runs the DP and collects the union `L` of max-length subsequences.
pub fn longest_subsequences(graph: &TaskGraph, executed: &[ClassId]) -> (DpState, BTreeSet<Vec<ClassId>>) {
    let n = executed.len();
    let mut dp = vec![1usize; n];
    let mut subseq: Vec<BTreeSet<Vec<ClassId>>> =
        executed.iter().map(|&y| core::iter::once(vec![y]).collect()).collect();

    for i in 0..n {
        for j in 0..i {
            if !graph.connected(executed[i], executed[j]) {
                continue;
            }
            let extended = dp[j] + 1;
            if extended >= dp[i] {
                let grown: BTreeSet<Vec<ClassId>> = subseq[j]
                    .iter()
                    .map(|s| {
                        let mut s = s.clone();
                        s.push(executed[i]);
                        s
                    })
                    .collect();
                if extended > dp[i] {
                    dp[i] = extended;
                    subseq[i] = grown;
                } else {
                    subseq[i].extend(grown);
                }
            }
        }
    }

    let state = DpState { dp, subseq };
    let k = state.max_len();
    let longest =
        state.dp.iter().zip(&state.subseq).filter(|(&d, _)| d == k).flat_map(|(_, s)| s.iter().cloned()).collect();
    (state, longest)
}

/// Merges the subsequences of `L` into groups that share a node or contain
/// graph-adjacent nodes, and returns the groups with their union `s*`.
pub fn merge_into_sstar(
    longest: &BTreeSet<Vec<ClassId>>,
    graph: &TaskGraph,
) -> (Vec<BTreeSet<ClassId>>, BTreeSet<ClassId>) {
    let mut groups: Vec<BTreeSet<ClassId>> = longest.iter().map(|s| s.iter().copied().collect()).collect();

    let touches = |a: &BTreeSet<ClassId>, b: &BTreeSet<ClassId>| {
        a.iter().any(|x| b.contains(x) || b.iter().any(|&y| graph.connected(*x, y)))
    };

    // Fixpoint: keep folding any group into an earlier one it touches.
    let mut merged = true;
    while merged {
        merged = false;
        'outer: for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                if touches(&groups[i], &groups[j]) {
                    let g = groups.swap_remove(j);
                    groups[i].extend(g);
                    merged = true;
                    break 'outer;
                }
            }
        }
    }
    groups.sort();
    let s_star = groups.iter().flatten().copied().collect();
    (groups, s_star)
}

/// Full prediction with all intermediate results.
pub fn predict(graph: &TaskGraph, executed: &[ClassId]) -> MatchResultSet {
    let (_, longest) = longest_subsequences(graph, executed);
    let (components, s_star) = merge_into_sstar(&longest, graph);
    let seeded = !executed.iter().any(|&y| graph.is_incident(y));
    let sources: Vec<ClassId> = if seeded { vec![graph.start_node()] } else { s_star.iter().copied().collect() };
    let candidates = sources
        .iter()
        .flat_map(|&a| graph.successors_or_empty(a).iter().copied())
        .filter(|c| !s_star.contains(c))
        .collect();
    MatchResultSet { longest, components, s_star, candidates, seeded }
}

/// Candidate set `C_t` of valid next actions.
///
/// An empty history, or one in which no label touches the graph, yields the
/// successors of the start node.
pub fn valid_next_actions(graph: &TaskGraph, executed: &[ClassId]) -> BTreeSet<ClassId> {
    predict(graph, executed).candidates
}
