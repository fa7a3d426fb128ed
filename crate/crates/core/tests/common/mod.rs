//! Independent reference implementations and random instance builders shared
//! by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use amnar_core::dataset::{FeatureMatrix, TrainingSample};
use amnar_core::graph::TaskGraph;
use amnar_core::rrb::{init_params, RrbConfig, RrbParams};
use amnar_core::ClassId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random DAG over `n` classes: edges only go from lower to higher position
/// in a random permutation; the start node links to a random non-empty subset.
pub fn random_dag(n: usize, density: f64, rng: &mut impl Rng) -> TaskGraph {
    let mut order: Vec<ClassId> = (0..n as ClassId).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                edges.push((order[i], order[j]));
            }
        }
    }
    let start = n as ClassId;
    let mut roots: Vec<ClassId> = (0..n as ClassId).filter(|_| rng.random_bool(0.4)).collect();
    if roots.is_empty() {
        roots.push(order[0]);
    }
    edges.extend(roots.into_iter().map(|r| (start, r)));
    TaskGraph::from_edges(n, edges).expect("random DAG is valid")
}

/// A walk through `graph` with `noise` probability of replacing each label by
/// an arbitrary (possibly out-of-graph) label.
pub fn noisy_walk(graph: &TaskGraph, max_len: usize, noise: f64, rng: &mut impl Rng) -> Vec<ClassId> {
    let len = rng.random_range(0..=max_len);
    let mut node = graph.start_node();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let succ = graph.successors_or_empty(node);
        let next = if succ.is_empty() {
            rng.random_range(0..graph.num_classes() as ClassId)
        } else {
            succ[rng.random_range(0..succ.len())]
        };
        node = next;
        if rng.random_bool(noise) {
            out.push(rng.random_range(0..graph.num_classes() as ClassId + 2));
        } else {
            out.push(next);
        }
    }
    out
}

fn linked(graph: &TaskGraph, a: ClassId, b: ClassId) -> bool {
    graph.edges().any(|(u, v)| (u, v) == (a, b) || (u, v) == (b, a))
}

/// Valid next actions by brute force: every index subset is tested for
/// pairwise connection of consecutive elements; the nodes of all longest ones
/// form `s*`; the answer is the children of `s*` outside `s*`.
pub fn papb_oracle(graph: &TaskGraph, executed: &[ClassId]) -> (BTreeSet<ClassId>, BTreeSet<ClassId>) {
    let n = executed.len();
    let mut best = 0;
    let mut nodes = BTreeSet::new();
    for mask in 1u32..(1 << n) {
        let seq: Vec<ClassId> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| executed[i]).collect();
        if !seq.windows(2).all(|w| linked(graph, w[0], w[1])) {
            continue;
        }
        if seq.len() > best {
            best = seq.len();
            nodes.clear();
        }
        if seq.len() == best {
            nodes.extend(seq);
        }
    }
    let touches_graph = executed.iter().any(|&y| graph.edges().any(|(u, v)| u == y || v == y));
    let sources: Vec<ClassId> = if touches_graph { nodes.iter().copied().collect() } else { vec![graph.start_node()] };
    let children =
        graph.edges().filter(|(u, _)| sources.contains(u)).map(|(_, v)| v).filter(|v| !nodes.contains(v)).collect();
    (nodes, children)
}

/// Recursive three-colour depth-first search.
pub fn dfs_acyclic(graph: &TaskGraph) -> bool {
    fn visit(u: usize, adj: &[Vec<usize>], colour: &mut [u8]) -> bool {
        colour[u] = 1;
        for &v in &adj[u] {
            if colour[v] == 1 || (colour[v] == 0 && !visit(v, adj, colour)) {
                return false;
            }
        }
        colour[u] = 2;
        true
    }
    let n = graph.node_count();
    let mut adj = vec![Vec::new(); n];
    for (u, v) in graph.edges() {
        adj[u as usize].push(v as usize);
    }
    let mut colour = vec![0u8; n];
    (0..n).all(|u| colour[u] != 0 || visit(u, &adj, &mut colour))
}

pub fn random_matrix(t: usize, d: usize, rng: &mut impl Rng) -> FeatureMatrix {
    let values = (0..t * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureMatrix::from_flat(t, d, values).unwrap()
}

/// Initialized parameters with every tensor (including the residual head)
/// randomized so that no gradient is trivially zero.
pub fn random_params(cfg: RrbConfig, seed: u64) -> RrbParams {
    let mut p = init_params(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for w in p.res_weight.iter_mut().chain(p.res_bias.iter_mut()) {
        *w = r.random_range(-0.5..0.5);
    }
    for layer in &mut p.conv {
        for b in &mut layer.bias {
            *b = r.random_range(-0.2..0.2);
        }
    }
    for b in p.query.bias.iter_mut().chain(p.value.bias.iter_mut()) {
        *b = r.random_range(-0.2..0.2);
    }
    p
}

pub fn random_sample(t: usize, d: usize, rng: &mut impl Rng) -> (Vec<f64>, TrainingSample) {
    let center: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sample = TrainingSample { context: random_matrix(t, d, rng), target_class: 0, target_feature: target };
    (center, sample)
}

/// Straight-line evaluation of the whole block for one query over the full
/// (untruncated) context.
pub fn naive_residual(p: &RrbParams, context: &FeatureMatrix, query: &[f64]) -> Vec<f64> {
    let cfg = p.config;
    let t = context.frames();
    let d = cfg.dim;
    if t == 0 {
        return vec![0.0; d];
    }
    let mut h: Vec<Vec<f64>> = context.rows().map(|r| r.to_vec()).collect();
    for (l, layer) in p.conv.iter().enumerate() {
        let dil = cfg.dilation(l);
        let mut next = h.clone();
        for s in 0..t {
            for o in 0..d {
                let mut z = layer.bias[o];
                for tap in 0..cfg.kernel {
                    let back = (cfg.kernel - 1 - tap) * dil;
                    if back <= s {
                        for i in 0..d {
                            z += layer.weight[tap * d * d + o * d + i] * h[s - back][i];
                        }
                    }
                }
                next[s][o] = h[s][o] + z.max(0.0);
            }
        }
        h = next;
    }
    naive_attention(p, &h, query)
}

/// Attention part only, over already convolved frames.
pub fn naive_attention(p: &RrbParams, frames: &[Vec<f64>], query: &[f64]) -> Vec<f64> {
    let cfg = p.config;
    let d = cfg.dim;
    let t = frames.len();
    if t == 0 {
        return vec![0.0; d];
    }
    let w = t.min(cfg.attn_window);
    let window = &frames[t - w..];
    let k = cfg.proj_kernel;
    let project = |weights: &[f64], bias: &[f64], seq: &[Vec<f64>], s: usize, c: usize| {
        let mut y = if bias.is_empty() { 0.0 } else { bias[c] };
        for tap in 0..k {
            let back = k - 1 - tap;
            if back <= s {
                y += weights[tap * d + c] * seq[s - back][c];
            }
        }
        y
    };
    let q_seq = vec![query.to_vec()];
    let hd = cfg.head_dim();
    let mut u = vec![0.0; d];
    for head in 0..cfg.heads {
        let mut scores = vec![0.0; w];
        for j in 0..w {
            for c in head * hd..(head + 1) * hd {
                let q = project(&p.query.weight, &p.query.bias, &q_seq, 0, c);
                let key = project(&p.key.weight, &p.key.bias, window, j, c);
                scores[j] += q * key;
            }
            scores[j] /= (hd as f64).sqrt();
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut attended = vec![0.0; hd];
        for j in 0..w {
            for (ci, c) in (head * hd..(head + 1) * hd).enumerate() {
                attended[ci] += exps[j] / total * project(&p.value.weight, &p.value.bias, window, j, c);
            }
        }
        for r in 0..hd {
            for c in 0..hd {
                u[head * hd + r] += p.head_out[head][r * hd + c] * attended[c];
            }
        }
    }
    (0..d).map(|o| p.res_bias[o] + (0..d).map(|c| p.res_weight[o * d + c] * u[c]).sum::<f64>()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
