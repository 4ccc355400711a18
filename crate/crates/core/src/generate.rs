//! Random and exhaustive graph generation for tests and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{GraphBuilder, MixedGraph};

/// Random acyclic mixed graph on `n` nodes named `v0..`. Each pair gets a
/// directed edge with probability `p_dir` (oriented along a random order)
/// and, independently, a bidirected edge with probability `p_bi`.
pub fn random_graph(seed: u64, n: usize, p_dir: f64, p_bi: f64) -> MixedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut b = GraphBuilder::new();
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    for name in &names {
        b.node(name);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(p_dir) {
                b.directed(&names[order[i]], &names[order[j]])
                    .expect("fresh edge");
            }
            if rng.random_bool(p_bi) {
                b.bidirected(&names[order[i]], &names[order[j]])
                    .expect("fresh edge");
            }
        }
    }
    b.build().expect("acyclic by construction")
}

/// Every acyclic mixed graph on `n` labelled nodes with at most `max_dir`
/// directed and `max_bi` bidirected edges.
pub fn all_graphs(n: usize, max_dir: usize, max_bi: usize) -> Vec<MixedGraph> {
    let ordered: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let unordered: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut out = Vec::new();
    for dir in subsets(ordered.len(), max_dir) {
        let edges: Vec<(usize, usize)> = dir.iter().map(|&i| ordered[i]).collect();
        if edges.iter().any(|&(a, b)| edges.contains(&(b, a))) {
            continue;
        }
        for bi in subsets(unordered.len(), max_bi) {
            let mut b = GraphBuilder::new();
            for name in &names {
                b.node(name);
            }
            for &(t, h) in &edges {
                b.directed(&names[t], &names[h]).expect("fresh edge");
            }
            for &i in &bi {
                let (p, q) = unordered[i];
                b.bidirected(&names[p], &names[q]).expect("fresh edge");
            }
            if let Ok(g) = b.build() {
                out.push(g);
            }
        }
    }
    out
}

/// Index subsets of `0..m` with at most `max` elements, smallest first.
fn subsets(m: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max.min(m) {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |&l| l + 1);
            for i in start..m {
                let mut t = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
