//! d-separation in mixed graphs, its auxiliary-variable form, and separator
//! construction.
//!
//! A bidirected edge behaves like a fork through a latent common cause: it
//! carries an arrowhead into both endpoints.

use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::graph::{EdgeSet, MixedGraph, NodeId};

fn check_query(g: &MixedGraph, x: NodeId, y: NodeId, given: &[NodeId]) -> Result<()> {
    for &v in given.iter().chain([&x, &y]) {
        if !g.contains(v) {
            return Err(Error::UnknownNode(format!("{v}")));
        }
    }
    if x == y {
        return Err(Error::Precondition(format!(
            "separation query needs two distinct nodes, got {} twice",
            g.name(x)
        )));
    }
    if given.contains(&x) || given.contains(&y) {
        return Err(Error::Precondition(
            "conditioning set contains an endpoint of the query".into(),
        ));
    }
    Ok(())
}

/// Nodes joined to `x` by a path that is active given the nodes marked in
/// `given`.
pub(crate) fn active_reach(g: &MixedGraph, x: NodeId, given: &[bool]) -> Vec<bool> {
    let seeds: Vec<NodeId> = g.nodes().filter(|v| given[v.0]).collect();
    let opens_collider = g.ancestral_mask(seeds);
    let n = g.n();
    // visited[v][0]: reached with a tail at v, visited[v][1]: with an arrowhead.
    let mut visited = vec![[false; 2]; n];
    let mut reached = vec![false; n];
    let mut queue = VecDeque::new();
    visited[x.0][0] = true;
    queue.push_back((x, false));
    while let Some((v, arrow_in)) = queue.pop_front() {
        reached[v.0] = true;
        let pass_through = !given[v.0];
        let into_v_allowed = if arrow_in {
            opens_collider[v.0]
        } else {
            pass_through
        };
        let mut visit = |u: NodeId, arrow: bool, queue: &mut VecDeque<(NodeId, bool)>| {
            let slot = &mut visited[u.0][arrow as usize];
            if !*slot {
                *slot = true;
                queue.push_back((u, arrow));
            }
        };
        if pass_through {
            for &e in g.outgoing(v) {
                visit(g.edge_ref(e).head, true, &mut queue);
            }
        }
        if into_v_allowed {
            for &e in g.incoming(v) {
                visit(g.edge_ref(e).tail, false, &mut queue);
            }
            for &s in g.siblings(v) {
                visit(s, true, &mut queue);
            }
        }
    }
    reached
}

fn mask(g: &MixedGraph, nodes: &[NodeId]) -> Vec<bool> {
    let mut m = vec![false; g.n()];
    for v in nodes {
        m[v.0] = true;
    }
    m
}

/// True iff every path between `x` and `y` is blocked by `given`.
pub fn d_separated(g: &MixedGraph, x: NodeId, y: NodeId, given: &[NodeId]) -> Result<bool> {
    check_query(g, x, y, given)?;
    Ok(!active_reach(g, x, &mask(g, given))[y.0])
}

/// Separation of the auxiliary variable `z*` (with the coefficients of
/// `known` subtracted) from `y` given `given`, decided in the graph with
/// `known` removed.
///
/// Fails when `given` or `y` contains `z` or one of its descendants: the
/// equivalence does not hold there.
pub fn av_separated(
    g: &MixedGraph,
    z: NodeId,
    known: &EdgeSet,
    y: NodeId,
    given: &[NodeId],
) -> Result<bool> {
    check_query(g, z, y, given)?;
    g.check_edges(known)?;
    if let Some(e) = known.iter().find(|&e| g.edge_ref(e).head != z) {
        return Err(Error::Precondition(format!(
            "edge {} does not point into {}",
            g.edge_label(e),
            g.name(z)
        )));
    }
    let de = g.descendant_mask([z]);
    if let Some(&bad) = given.iter().chain([&y]).find(|v| de[v.0]) {
        return Err(Error::Precondition(format!(
            "{} is a descendant of {}",
            g.name(bad),
            g.name(z)
        )));
    }
    d_separated(&g.remove_edges(known)?, z, y, given)
}

/// Undirected graph whose vertex separation over the ancestral set `keep`
/// coincides with d-separation for conditioning sets inside `keep`.
fn moral_adjacency(g: &MixedGraph, keep: &[bool]) -> Vec<BTreeSet<usize>> {
    let n = g.n();
    let mut adj = vec![BTreeSet::new(); n];
    let link = |a: usize, b: usize, adj: &mut Vec<BTreeSet<usize>>| {
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    };
    for e in g.directed_edges() {
        if keep[e.tail.0] && keep[e.head.0] {
            link(e.tail.0, e.head.0, &mut adj);
        }
    }
    // Every district together with its parents becomes a clique.
    let mut district = vec![usize::MAX; n];
    for start in 0..n {
        if !keep[start] || district[start] != usize::MAX {
            continue;
        }
        let mut members = vec![start];
        district[start] = start;
        let mut i = 0;
        while i < members.len() {
            let v = members[i];
            for s in g.siblings(NodeId(v)) {
                if keep[s.0] && district[s.0] == usize::MAX {
                    district[s.0] = start;
                    members.push(s.0);
                }
            }
            i += 1;
        }
        let mut clique: BTreeSet<usize> = members.iter().copied().collect();
        for &m in &members {
            clique.extend(
                g.parents(NodeId(m))
                    .into_iter()
                    .map(|p| p.0)
                    .filter(|&p| keep[p]),
            );
        }
        let clique: Vec<usize> = clique.into_iter().collect();
        for (i, &a) in clique.iter().enumerate() {
            for &b in &clique[i + 1..] {
                link(a, b, &mut adj);
            }
        }
    }
    adj
}

fn component(adj: &[BTreeSet<usize>], start: usize, blocked: &[bool]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] && !blocked[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen
}

/// A set separating `z` from `y` that avoids `forbidden`, chosen as the
/// minimal vertex cut adjacent to `y`'s side of the moral graph over the
/// ancestors of `{y, z}`. `None` when no separator avoiding `forbidden`
/// exists.
pub fn nearest_separator(
    g: &MixedGraph,
    y: NodeId,
    z: NodeId,
    forbidden: &[NodeId],
) -> Option<Vec<NodeId>> {
    if y == z || !g.contains(y) || !g.contains(z) {
        return None;
    }
    let forbidden = mask(g, forbidden);
    let ancestral = g.ancestral_mask([y, z]);
    let allowed: Vec<bool> = (0..g.n())
        .map(|v| ancestral[v] && !forbidden[v] && v != y.0 && v != z.0)
        .collect();
    // If any separator inside the allowed nodes exists, the allowed
    // ancestors of {y, z} form one.
    if active_reach(g, z, &allowed)[y.0] {
        return None;
    }
    let adj = moral_adjacency(g, &ancestral);
    let near_y = component(&adj, y.0, &allowed);
    let cut: Vec<bool> = (0..g.n())
        .map(|v| allowed[v] && adj[v].iter().any(|&u| near_y[u]))
        .collect();
    let near_z = component(&adj, z.0, &cut);
    let minimal: Vec<NodeId> = (0..g.n())
        .filter(|&v| cut[v] && adj[v].iter().any(|&u| near_z[u]))
        .map(NodeId)
        .collect();
    if active_reach(g, z, &mask(g, &minimal))[y.0] {
        debug_assert!(false, "moral cut failed to d-separate");
        return Some((0..g.n()).filter(|&v| allowed[v]).map(NodeId).collect());
    }
    Some(minimal)
}

/// Smallest-first search over all subsets of the permitted nodes. Intended as
/// a reference for small graphs.
pub fn exhaustive_separator(
    g: &MixedGraph,
    y: NodeId,
    z: NodeId,
    forbidden: &[NodeId],
) -> Option<Vec<NodeId>> {
    if y == z {
        return None;
    }
    let pool: Vec<NodeId> = g
        .nodes()
        .filter(|&v| v != y && v != z && !forbidden.contains(&v))
        .collect();
    assert!(
        pool.len() <= 20,
        "exhaustive separator search is for small graphs"
    );
    let mut subsets: Vec<u32> = (0..(1u32 << pool.len())).collect();
    subsets.sort_by_key(|s| (s.count_ones(), *s));
    subsets.into_iter().find_map(|bits| {
        let w: Vec<NodeId> = (0..pool.len())
            .filter(|i| bits >> i & 1 == 1)
            .map(|i| pool[i])
            .collect();
        (!active_reach(g, z, &mask(g, &w))[y.0]).then_some(w)
    })
}
