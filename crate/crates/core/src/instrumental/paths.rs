//! Collider-free paths (treks) and the conditions on systems of them.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{EdgeId, MixedGraph, NodeId};

/// One traversal step of a path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Step {
    /// Against a directed edge: from its head to its tail.
    Up(EdgeId),
    /// Along a directed edge.
    Down(EdgeId),
    Bidirected,
}

/// A path given by its nodes and the steps between consecutive nodes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TrekPath {
    pub nodes: Vec<NodeId>,
    pub steps: Vec<Step>,
}

impl TrekPath {
    pub fn trivial(v: NodeId) -> Self {
        TrekPath {
            nodes: vec![v],
            steps: Vec::new(),
        }
    }

    /// Builds a path through `nodes`, taking a directed edge between
    /// consecutive nodes when there is one and a bidirected edge otherwise.
    pub fn through(g: &MixedGraph, nodes: &[NodeId]) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Precondition("empty path".into()));
        }
        let mut steps = Vec::with_capacity(nodes.len() - 1);
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            let step = if let Some(e) = g.find_edge(a, b) {
                Step::Down(e)
            } else if let Some(e) = g.find_edge(b, a) {
                Step::Up(e)
            } else if g.has_bidirected(a, b) {
                Step::Bidirected
            } else {
                return Err(Error::Precondition(format!(
                    "{} and {} are not adjacent",
                    g.name(a),
                    g.name(b)
                )));
            };
            steps.push(step);
        }
        Ok(TrekPath {
            nodes: nodes.to_vec(),
            steps,
        })
    }

    pub fn start(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn end(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Index of the top node, or of the left end of a bidirected top.
    /// `None` when the path has a collider.
    fn top(&self) -> Option<(usize, bool)> {
        let ups = self
            .steps
            .iter()
            .take_while(|s| matches!(s, Step::Up(_)))
            .count();
        let rest = &self.steps[ups..];
        let (bidirected, downs) = match rest.first() {
            Some(Step::Bidirected) => (true, &rest[1..]),
            _ => (false, rest),
        };
        downs
            .iter()
            .all(|s| matches!(s, Step::Down(_)))
            .then_some((ups, bidirected))
    }

    pub fn is_trek(&self) -> bool {
        self.top().is_some()
    }

    /// Whether the edge leaving position `i` toward the end has an arrowhead
    /// at `nodes[i]`.
    pub(crate) fn arrow_back_at(&self, i: usize) -> bool {
        matches!(self.steps.get(i), Some(Step::Up(_) | Step::Bidirected))
    }

    /// Whether the edge entering position `i` from the start has an
    /// arrowhead at `nodes[i]`.
    pub(crate) fn arrow_forward_at(&self, i: usize) -> bool {
        i > 0 && matches!(self.steps[i - 1], Step::Down(_) | Step::Bidirected)
    }
}

/// Left and Right node sets of a trek. A top node belongs to both; with a
/// bidirected top its start-side end is on the Left, the other on the Right.
pub fn left_right(p: &TrekPath) -> Result<(BTreeSet<NodeId>, BTreeSet<NodeId>)> {
    let (top, bidirected) = p
        .top()
        .ok_or_else(|| Error::Precondition("path has a collider".into()))?;
    let left = p.nodes[..=top].iter().copied().collect();
    let right_from = if bidirected { top + 1 } else { top };
    let right = p.nodes[right_from..].iter().copied().collect();
    Ok((left, right))
}

pub fn sided_intersection(
    a: &(BTreeSet<NodeId>, BTreeSet<NodeId>),
    b: &(BTreeSet<NodeId>, BTreeSet<NodeId>),
) -> bool {
    !a.0.is_disjoint(&b.0) || !a.1.is_disjoint(&b.1)
}

pub fn no_sided_intersection(paths: &[TrekPath]) -> Result<bool> {
    let sides = paths.iter().map(left_right).collect::<Result<Vec<_>>>()?;
    for i in 0..sides.len() {
        for j in i + 1..sides.len() {
            if sided_intersection(&sides[i], &sides[j]) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Appends the step `end -> y` along edge `e`.
fn extend(p: &TrekPath, e: EdgeId, y: NodeId) -> TrekPath {
    let mut q = p.clone();
    q.nodes.push(y);
    q.steps.push(Step::Down(e));
    q
}

fn ordered_pair_ok(earlier: &TrekPath, later: &TrekPath, y: NodeId) -> bool {
    if earlier.nodes.contains(&later.start()) {
        return false;
    }
    for (i, v) in earlier.nodes.iter().enumerate() {
        if *v == y {
            continue;
        }
        if let Some(j) = later.nodes.iter().position(|u| u == v) {
            if !earlier.arrow_back_at(i) || !later.arrow_forward_at(j) {
                return false;
            }
        }
    }
    true
}

/// The ordering form of the path condition: some order of the paths, each
/// extended by its edge into `y`, such that for every earlier `p_i` and later
/// `p_j`, the start of `p_j` is not on `p_i`, and every other shared node `v`
/// has arrowheads at `v` on both `p_i[v..y]` and `p_j[start..v]`.
pub fn brito_ordering_exists(paths: &[TrekPath], edges: &[EdgeId], y: NodeId) -> bool {
    assert_eq!(paths.len(), edges.len());
    let ext: Vec<TrekPath> = paths
        .iter()
        .zip(edges)
        .map(|(p, &e)| extend(p, e, y))
        .collect();
    let k = ext.len();
    let mut order: Vec<usize> = Vec::with_capacity(k);
    let mut used = vec![false; k];
    fn place(ext: &[TrekPath], y: NodeId, order: &mut Vec<usize>, used: &mut [bool]) -> bool {
        if order.len() == ext.len() {
            return true;
        }
        for c in 0..ext.len() {
            if used[c] || !order.iter().all(|&i| ordered_pair_ok(&ext[i], &ext[c], y)) {
                continue;
            }
            used[c] = true;
            order.push(c);
            if place(ext, y, order, used) {
                return true;
            }
            order.pop();
            used[c] = false;
        }
        false
    }
    place(&ext, y, &mut order, &mut used)
}

/// All simple treks from `from` to `to` that avoid `avoid`, shortest first.
pub fn treks(
    g: &MixedGraph,
    from: NodeId,
    to: NodeId,
    avoid: &[NodeId],
    cap: usize,
) -> Result<Vec<TrekPath>> {
    if from == to {
        return Ok(vec![TrekPath::trivial(from)]);
    }
    if avoid.contains(&from) || avoid.contains(&to) {
        return Ok(Vec::new());
    }
    let mut blocked = vec![false; g.n()];
    for v in avoid {
        blocked[v.0] = true;
    }
    let mut out = Vec::new();
    let mut nodes = vec![from];
    let mut steps = Vec::new();
    blocked[from.0] = true;
    walk(
        g,
        to,
        true,
        &mut blocked,
        &mut nodes,
        &mut steps,
        &mut out,
        cap,
    )?;
    out.sort_by(|a: &TrekPath, b: &TrekPath| {
        (a.len(), &a.nodes, &a.steps).cmp(&(b.len(), &b.nodes, &b.steps))
    });
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    g: &MixedGraph,
    to: NodeId,
    rising: bool,
    blocked: &mut Vec<bool>,
    nodes: &mut Vec<NodeId>,
    steps: &mut Vec<Step>,
    out: &mut Vec<TrekPath>,
    cap: usize,
) -> Result<()> {
    let v = *nodes.last().unwrap();
    if v == to {
        if out.len() >= cap {
            return Err(Error::PathCap(cap));
        }
        out.push(TrekPath {
            nodes: nodes.clone(),
            steps: steps.clone(),
        });
        return Ok(());
    }
    let mut moves: Vec<(NodeId, Step, bool)> = Vec::new();
    if rising {
        for &e in g.incoming(v) {
            moves.push((g.edge_ref(e).tail, Step::Up(e), true));
        }
        for &s in g.siblings(v) {
            moves.push((s, Step::Bidirected, false));
        }
    }
    for &e in g.outgoing(v) {
        moves.push((g.edge_ref(e).head, Step::Down(e), false));
    }
    for (u, step, still_rising) in moves {
        if blocked[u.0] {
            continue;
        }
        blocked[u.0] = true;
        nodes.push(u);
        steps.push(step);
        walk(g, to, still_rising, blocked, nodes, steps, out, cap)?;
        steps.pop();
        nodes.pop();
        blocked[u.0] = false;
    }
    Ok(())
}
