//! Random instances shared by the property and acceptance suites.
#![allow(dead_code)]

use auxiv::generate::random_graph;
use auxiv::graph::{AuxVarDef, EdgeId, EdgeSet, MixedGraph, NodeId};
use auxiv::oracle::{
    error_partial_cov, implied_sigma, partial_cov, sample_params, ParamAssignment,
};
use auxiv::separation::av_separated;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn graph(rng: &mut ChaCha8Rng, min_n: usize, max_n: usize) -> MixedGraph {
    let n = rng.random_range(min_n..=max_n);
    let p_dir = rng.random_range(0.2..0.6);
    let p_bi = rng.random_range(0.0..0.35);
    random_graph(rng.random(), n, p_dir, p_bi)
}

pub fn subset(rng: &mut ChaCha8Rng, pool: &[NodeId], p: f64) -> Vec<NodeId> {
    pool.iter()
        .copied()
        .filter(|_| rng.random_bool(p))
        .collect()
}

/// Two distinct nodes; `pool` must hold at least two.
pub fn pair(rng: &mut ChaCha8Rng, pool: &[NodeId]) -> (NodeId, NodeId) {
    let two: Vec<NodeId> = pool.choose_multiple(rng, 2).copied().collect();
    (two[0], two[1])
}

/// Maximum absolute entry of the implied covariance.
pub fn scale(g: &MixedGraph, p: &ParamAssignment) -> f64 {
    implied_sigma(g, p).scale
}

pub struct AuxSeparationCase {
    pub graph: MixedGraph,
    pub z: NodeId,
    pub edges: EdgeSet,
    pub y: NodeId,
    pub given: Vec<NodeId>,
    pub separated: bool,
    /// σ(z*, y | W) in the augmented graph.
    pub aux_cov: f64,
    /// σ(z, y | W) with the edges removed.
    pub cut_cov: f64,
    pub scale: f64,
}

/// A random instance of the auxiliary-variable separation property: `E` a
/// non-empty subset of the incoming edges of `z`, and `W ∪ {y}` free of
/// descendants of `z`.
pub fn aux_separation_case(seed: u64) -> AuxSeparationCase {
    let mut rng = rng(seed);
    loop {
        let g = graph(&mut rng, 3, 7);
        let with_parents: Vec<NodeId> = g.nodes().filter(|&v| !g.incoming(v).is_empty()).collect();
        let Some(&z) = with_parents.choose(&mut rng) else {
            continue;
        };
        let de = g.descendant_mask([z]);
        let outside: Vec<NodeId> = g.nodes().filter(|v| !de[v.0]).collect();
        let Some(&y) = outside.choose(&mut rng) else {
            continue;
        };
        let mut edges: EdgeSet = g
            .incoming(z)
            .iter()
            .copied()
            .filter(|_| rng.random_bool(0.6))
            .collect();
        if edges.is_empty() {
            edges.insert(g.incoming(z)[0]);
        }
        let pool: Vec<NodeId> = outside.iter().copied().filter(|&v| v != y).collect();
        let given = subset(&mut rng, &pool, 0.35);
        let separated = av_separated(&g, z, &edges, y, &given).expect("precondition holds");
        let p = sample_params(&g, rng.random());
        let aug = g
            .augment(&[AuxVarDef {
                base: z,
                subtracted: edges.to_vec(),
            }])
            .expect("valid definition");
        let zs = NodeId(g.n());
        let sa = implied_sigma(&aug, &p.extend_to(&aug));
        let aux_cov = partial_cov(&sa, zs, y, &given).expect("regular");
        let cut = g.remove_edges(&edges).expect("edges exist");
        let sc = implied_sigma(&cut, &p.restrict_to(&cut));
        let cut_cov = partial_cov(&sc, z, y, &given).expect("regular");
        let scale = sa.scale.max(sc.scale);
        return AuxSeparationCase {
            graph: g,
            z,
            edges,
            y,
            given,
            separated,
            aux_cov,
            cut_cov,
            scale,
        };
    }
}

pub struct IdentityCase {
    /// Left minus right side of the identity, and the scale to compare with.
    pub gap: f64,
    pub scale: f64,
}

/// σ(x, y | W) = Σ_i λ_i σ(p_i, y | W) + σ(u_x, y | W).
pub fn decomposition_case(seed: u64) -> IdentityCase {
    let mut rng = rng(seed);
    let g = graph(&mut rng, 2, 7);
    let nodes: Vec<NodeId> = g.nodes().collect();
    let x = *nodes.choose(&mut rng).unwrap();
    let y = *nodes.choose(&mut rng).unwrap();
    let pool: Vec<NodeId> = nodes
        .iter()
        .copied()
        .filter(|&v| v != x && v != y)
        .collect();
    let given = subset(&mut rng, &pool, 0.35);
    let p = sample_params(&g, rng.random());
    let s = implied_sigma(&g, &p);
    let lhs = partial_cov(&s, x, y, &given).unwrap();
    let mut rhs = error_partial_cov(&g, &p, x, y, &given).unwrap();
    for &e in g.incoming(x) {
        let t = g.edge(e).unwrap().tail;
        if !given.contains(&t) {
            rhs += p.coef(e) * partial_cov(&s, t, y, &given).unwrap();
        }
    }
    IdentityCase {
        gap: lhs - rhs,
        scale: s.scale,
    }
}

fn random_edges(rng: &mut ChaCha8Rng, g: &MixedGraph) -> EdgeSet {
    let all: Vec<EdgeId> = g.directed_edges().map(|e| e.id).collect();
    let mut edges: EdgeSet = all
        .iter()
        .copied()
        .filter(|_| rng.random_bool(0.3))
        .collect();
    if edges.is_empty() {
        if let Some(&e) = all.choose(rng) {
            edges.insert(e);
        }
    }
    edges
}

/// Edge removal leaves σ(x, y | W) unchanged when no endpoint or
/// conditioning node descends from a head of the removed edges. With
/// `error` set, compares σ(u_x, y | W) and only `W ∪ {y}` is restricted.
pub fn removal_case(seed: u64, error: bool) -> IdentityCase {
    let mut rng = rng(seed);
    loop {
        let g = graph(&mut rng, 2, 7);
        let edges = random_edges(&mut rng, &g);
        if edges.is_empty() {
            continue;
        }
        let de = g.descendant_mask(g.heads(&edges));
        let free: Vec<NodeId> = g.nodes().filter(|v| !de[v.0]).collect();
        let Some(&y) = free.choose(&mut rng) else {
            continue;
        };
        let x = if error {
            *g.nodes().collect::<Vec<_>>().choose(&mut rng).unwrap()
        } else {
            let Some(&x) = free.choose(&mut rng) else {
                continue;
            };
            x
        };
        let pool: Vec<NodeId> = free
            .iter()
            .copied()
            .filter(|&v| v != y && (error || v != x))
            .collect();
        let given = subset(&mut rng, &pool, 0.35);
        let p = sample_params(&g, rng.random());
        let cut = g.remove_edges(&edges).unwrap();
        let pc = p.restrict_to(&cut);
        let (a, b) = if error {
            (
                error_partial_cov(&g, &p, x, y, &given).unwrap(),
                error_partial_cov(&cut, &pc, x, y, &given).unwrap(),
            )
        } else {
            (
                partial_cov(&implied_sigma(&g, &p), x, y, &given).unwrap(),
                partial_cov(&implied_sigma(&cut, &pc), x, y, &given).unwrap(),
            )
        };
        return IdentityCase {
            gap: a - b,
            scale: scale(&g, &p).max(scale(&cut, &pc)),
        };
    }
}
