//! Acyclic mixed graphs: directed edges carry structural coefficients,
//! bidirected edges mark correlated error terms.
//!
//! Directed edges are addressed by a stable [`EdgeId`] that survives edge
//! removal and augmentation. Node order is declaration order, and every
//! set-valued query returns nodes in that order.

mod parse;

pub use parse::{parse_graph, parse_known, parse_model, KnownValue, Model};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EdgeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// What multiplies the tail on a directed edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coefficient {
    /// An ordinary structural coefficient.
    Free,
    /// The `z -> z*` edge of an auxiliary variable.
    Unit,
    /// A `t -> z*` edge carrying minus the coefficient of the referenced edge.
    Negated(EdgeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DirectedEdge {
    pub id: EdgeId,
    pub tail: NodeId,
    pub head: NodeId,
    pub coefficient: Coefficient,
}

/// A set of directed edges of one graph, ordered by id.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeSet(BTreeSet<EdgeId>);

impl EdgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, e: EdgeId) -> bool {
        self.0.insert(e)
    }

    pub fn contains(&self, e: EdgeId) -> bool {
        self.0.contains(&e)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.0.iter().copied()
    }

    pub fn union(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet(self.0.union(&other.0).copied().collect())
    }

    pub fn difference(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet(self.0.difference(&other.0).copied().collect())
    }

    pub fn is_subset(&self, other: &EdgeSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn to_vec(&self) -> Vec<EdgeId> {
        self.0.iter().copied().collect()
    }
}

impl FromIterator<EdgeId> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = EdgeId>>(iter: I) -> Self {
        EdgeSet(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a EdgeSet {
    type Item = EdgeId;
    type IntoIter = std::iter::Copied<std::collections::btree_set::Iter<'a, EdgeId>>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter().copied()
    }
}

/// Definition of an auxiliary variable `base* = base - sum(coef(e) * tail(e))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuxVarDef {
    pub base: NodeId,
    pub subtracted: Vec<EdgeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relatives {
    pub parents: Vec<NodeId>,
    pub ancestors: Vec<NodeId>,
    pub descendants: Vec<NodeId>,
    pub siblings: Vec<NodeId>,
    pub incoming_edges: Vec<EdgeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedGraph {
    names: Vec<String>,
    edges: Vec<Option<DirectedEdge>>,
    bidirected: Vec<(NodeId, NodeId)>,
    incoming: Vec<Vec<EdgeId>>,
    outgoing: Vec<Vec<EdgeId>>,
    siblings: Vec<Vec<NodeId>>,
    topo: Vec<NodeId>,
}

/// Incremental construction with validation deferred to [`GraphBuilder::build`].
#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    names: Vec<String>,
    index: BTreeMap<String, NodeId>,
    edges: Vec<Option<DirectedEdge>>,
    bidirected: Vec<(NodeId, NodeId)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `name`, declaring it if needed.
    pub fn node(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = NodeId(self.names.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn directed(&mut self, tail: &str, head: &str) -> Result<EdgeId> {
        let t = self.node(tail);
        let h = self.node(head);
        self.directed_ids(t, h, Coefficient::Free)
    }

    pub fn bidirected(&mut self, a: &str, b: &str) -> Result<()> {
        let a = self.node(a);
        let b = self.node(b);
        self.bidirected_ids(a, b)
    }

    fn directed_ids(
        &mut self,
        tail: NodeId,
        head: NodeId,
        coefficient: Coefficient,
    ) -> Result<EdgeId> {
        if tail == head {
            return Err(Error::SelfLoop(self.names[tail.0].clone()));
        }
        if self
            .edges
            .iter()
            .flatten()
            .any(|e| e.tail == tail && e.head == head)
        {
            return Err(Error::DuplicateEdge(format!(
                "{} -> {}",
                self.names[tail.0], self.names[head.0]
            )));
        }
        let id = EdgeId(self.edges.len());
        self.edges.push(Some(DirectedEdge {
            id,
            tail,
            head,
            coefficient,
        }));
        Ok(id)
    }

    fn bidirected_ids(&mut self, a: NodeId, b: NodeId) -> Result<()> {
        if a == b {
            return Err(Error::SelfLoop(self.names[a.0].clone()));
        }
        let pair = (a.min(b), a.max(b));
        if self.bidirected.contains(&pair) {
            return Err(Error::DuplicateEdge(format!(
                "{} <-> {}",
                self.names[a.0], self.names[b.0]
            )));
        }
        self.bidirected.push(pair);
        Ok(())
    }

    pub fn build(self) -> Result<MixedGraph> {
        MixedGraph::from_parts(self.names, self.edges, self.bidirected)
    }
}

impl MixedGraph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::new()
    }

    fn from_parts(
        names: Vec<String>,
        edges: Vec<Option<DirectedEdge>>,
        bidirected: Vec<(NodeId, NodeId)>,
    ) -> Result<Self> {
        let n = names.len();
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        let mut siblings = vec![Vec::new(); n];
        for e in edges.iter().flatten() {
            if e.tail.0 >= n || e.head.0 >= n {
                return Err(Error::InvalidEdge(e.id.0));
            }
            incoming[e.head.0].push(e.id);
            outgoing[e.tail.0].push(e.id);
        }
        for &(a, b) in &bidirected {
            siblings[a.0].push(b);
            siblings[b.0].push(a);
        }
        let by_tail = |ids: &mut Vec<EdgeId>, pick: &dyn Fn(&DirectedEdge) -> NodeId| {
            ids.sort_by_key(|id| (pick(edges[id.0].as_ref().unwrap()), *id));
        };
        for v in 0..n {
            by_tail(&mut incoming[v], &|e| e.tail);
            by_tail(&mut outgoing[v], &|e| e.head);
            siblings[v].sort();
        }
        let mut g = MixedGraph {
            names,
            edges,
            bidirected,
            incoming,
            outgoing,
            siblings,
            topo: Vec::new(),
        };
        g.topo = g.compute_topological_order()?;
        Ok(g)
    }

    fn compute_topological_order(&self) -> Result<Vec<NodeId>> {
        let n = self.n();
        let mut indegree: Vec<usize> = (0..n).map(|v| self.incoming[v].len()).collect();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&v| indegree[v] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = ready.pop() {
            order.push(NodeId(v));
            for &e in &self.outgoing[v] {
                let h = self.edge_ref(e).head.0;
                indegree[h] -= 1;
                if indegree[h] == 0 {
                    ready.push(Reverse(h));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(Error::Cycle(self.find_cycle(&indegree)))
        }
    }

    /// Walks backwards along unresolved edges until a node repeats.
    fn find_cycle(&self, indegree: &[usize]) -> Vec<String> {
        let start = (0..self.n()).find(|&v| indegree[v] > 0).unwrap_or(0);
        let mut seen = vec![usize::MAX; self.n()];
        let mut walk = Vec::new();
        let mut v = start;
        while seen[v] == usize::MAX {
            seen[v] = walk.len();
            walk.push(v);
            v = self.incoming[v]
                .iter()
                .map(|&e| self.edge_ref(e).tail.0)
                .find(|&t| indegree[t] > 0)
                .expect("node left in a cycle has an unresolved parent");
        }
        let mut cycle: Vec<String> = walk[seen[v]..]
            .iter()
            .rev()
            .map(|&u| self.names[u].clone())
            .collect();
        cycle.push(cycle[0].clone());
        cycle
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n()).map(NodeId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: NodeId) -> &str {
        &self.names[v.0]
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.names.iter().position(|n| n == name).map(NodeId)
    }

    pub fn require_node(&self, name: &str) -> Result<NodeId> {
        self.node(name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.0 < self.n()
    }

    pub fn edge(&self, id: EdgeId) -> Option<&DirectedEdge> {
        self.edges.get(id.0).and_then(|e| e.as_ref())
    }

    pub(crate) fn edge_ref(&self, id: EdgeId) -> &DirectedEdge {
        self.edges[id.0].as_ref().expect("valid edge id")
    }

    /// Number of edge-id slots, including those of removed edges.
    pub fn edge_slots(&self) -> usize {
        self.edges.len()
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = &DirectedEdge> {
        self.edges.iter().flatten()
    }

    pub fn bidirected_edges(&self) -> &[(NodeId, NodeId)] {
        &self.bidirected
    }

    pub fn find_edge(&self, tail: NodeId, head: NodeId) -> Option<EdgeId> {
        self.outgoing
            .get(tail.0)?
            .iter()
            .copied()
            .find(|&e| self.edge_ref(e).head == head)
    }

    pub fn edge_label(&self, id: EdgeId) -> String {
        match self.edge(id) {
            Some(e) => format!("{}->{}", self.name(e.tail), self.name(e.head)),
            None => format!("{id}"),
        }
    }

    /// Incoming edges of `v`, ordered by tail.
    pub fn incoming(&self, v: NodeId) -> &[EdgeId] {
        &self.incoming[v.0]
    }

    pub fn outgoing(&self, v: NodeId) -> &[EdgeId] {
        &self.outgoing[v.0]
    }

    pub fn parents(&self, v: NodeId) -> Vec<NodeId> {
        self.incoming[v.0]
            .iter()
            .map(|&e| self.edge_ref(e).tail)
            .collect()
    }

    pub fn children(&self, v: NodeId) -> Vec<NodeId> {
        let mut c: Vec<NodeId> = self.outgoing[v.0]
            .iter()
            .map(|&e| self.edge_ref(e).head)
            .collect();
        c.sort();
        c
    }

    pub fn siblings(&self, v: NodeId) -> &[NodeId] {
        &self.siblings[v.0]
    }

    pub fn has_bidirected(&self, a: NodeId, b: NodeId) -> bool {
        self.siblings[a.0].binary_search(&b).is_ok()
    }

    pub fn topological_order(&self) -> &[NodeId] {
        &self.topo
    }

    /// Membership mask of `seeds` together with all their ancestors.
    pub fn ancestral_mask<I: IntoIterator<Item = NodeId>>(&self, seeds: I) -> Vec<bool> {
        self.closure_mask(seeds, |v| self.parents(v))
    }

    /// Membership mask of `seeds` together with all their descendants.
    pub fn descendant_mask<I: IntoIterator<Item = NodeId>>(&self, seeds: I) -> Vec<bool> {
        self.closure_mask(seeds, |v| self.children(v))
    }

    fn closure_mask<I, F>(&self, seeds: I, next: F) -> Vec<bool>
    where
        I: IntoIterator<Item = NodeId>,
        F: Fn(NodeId) -> Vec<NodeId>,
    {
        let mut mask = vec![false; self.n()];
        let mut queue: VecDeque<NodeId> = VecDeque::new();
        for s in seeds {
            if !mask[s.0] {
                mask[s.0] = true;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            for u in next(v) {
                if !mask[u.0] {
                    mask[u.0] = true;
                    queue.push_back(u);
                }
            }
        }
        mask
    }

    /// Strict ancestors of `v`.
    pub fn ancestors(&self, v: NodeId) -> BTreeSet<NodeId> {
        let mask = self.ancestral_mask([v]);
        self.nodes().filter(|&u| u != v && mask[u.0]).collect()
    }

    /// Strict descendants of `v`.
    pub fn descendants(&self, v: NodeId) -> BTreeSet<NodeId> {
        let mask = self.descendant_mask([v]);
        self.nodes().filter(|&u| u != v && mask[u.0]).collect()
    }

    pub fn relatives(&self, v: NodeId) -> Result<Relatives> {
        if !self.contains(v) {
            return Err(Error::UnknownNode(format!("{v}")));
        }
        let mut parents = self.parents(v);
        parents.sort();
        Ok(Relatives {
            parents,
            ancestors: self.ancestors(v).into_iter().collect(),
            descendants: self.descendants(v).into_iter().collect(),
            siblings: self.siblings(v).to_vec(),
            incoming_edges: self.incoming(v).to_vec(),
        })
    }

    pub fn heads(&self, edges: &EdgeSet) -> BTreeSet<NodeId> {
        edges.iter().map(|e| self.edge_ref(e).head).collect()
    }

    pub fn tails(&self, edges: &EdgeSet) -> Vec<NodeId> {
        edges.iter().map(|e| self.edge_ref(e).tail).collect()
    }

    pub fn check_edges(&self, edges: &EdgeSet) -> Result<()> {
        match edges.iter().find(|&e| self.edge(e).is_none()) {
            Some(bad) => Err(Error::InvalidEdge(bad.0)),
            None => Ok(()),
        }
    }

    /// The graph with the directed edges in `edges` deleted; ids of the
    /// remaining edges are unchanged.
    pub fn remove_edges(&self, edges: &EdgeSet) -> Result<MixedGraph> {
        self.check_edges(edges)?;
        if edges.is_empty() {
            return Ok(self.clone());
        }
        let kept = self
            .edges
            .iter()
            .map(|slot| slot.filter(|e| !edges.contains(e.id)))
            .collect();
        MixedGraph::from_parts(self.names.clone(), kept, self.bidirected.clone())
    }

    /// Adds one auxiliary node per definition, named `base*`, with a unit
    /// edge from the base and a negated copy of every subtracted edge.
    pub fn augment(&self, defs: &[AuxVarDef]) -> Result<MixedGraph> {
        let mut seen = BTreeSet::new();
        for def in defs {
            if !self.contains(def.base) {
                return Err(Error::UnknownNode(format!("{}", def.base)));
            }
            if !seen.insert(def.base) {
                return Err(Error::DuplicateAuxBase(self.name(def.base).to_string()));
            }
            let mut distinct = BTreeSet::new();
            for &e in &def.subtracted {
                let edge = self.edge(e).ok_or(Error::InvalidEdge(e.0))?;
                if edge.head != def.base || !distinct.insert(e) {
                    return Err(Error::InvalidEdge(e.0));
                }
            }
        }
        let mut names = self.names.clone();
        let mut edges = self.edges.clone();
        for def in defs {
            let aux = NodeId(names.len());
            let mut name = format!("{}*", self.name(def.base));
            while names.contains(&name) {
                name.push('*');
            }
            names.push(name);
            let mut push = |tail: NodeId, coefficient: Coefficient| {
                let id = EdgeId(edges.len());
                edges.push(Some(DirectedEdge {
                    id,
                    tail,
                    head: aux,
                    coefficient,
                }));
            };
            push(def.base, Coefficient::Unit);
            for &e in &def.subtracted {
                push(self.edge_ref(e).tail, Coefficient::Negated(e));
            }
        }
        MixedGraph::from_parts(names, edges, self.bidirected.clone())
    }

    /// Adds nodes named after `names` (with `*` appended on collision) and
    /// free directed edges between any nodes; existing ids are unchanged.
    pub fn extend(
        &self,
        names: &[&str],
        edges: &[(NodeId, NodeId)],
    ) -> Result<(MixedGraph, Vec<EdgeId>)> {
        let mut b = GraphBuilder {
            names: self.names.clone(),
            index: self
                .names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), NodeId(i)))
                .collect(),
            edges: self.edges.clone(),
            bidirected: self.bidirected.clone(),
        };
        for name in names {
            let mut name = name.to_string();
            while b.index.contains_key(&name) {
                name.push('*');
            }
            b.node(&name);
        }
        let mut ids = Vec::with_capacity(edges.len());
        for &(t, h) in edges {
            if t.0 >= b.names.len() || h.0 >= b.names.len() {
                return Err(Error::UnknownNode(format!(
                    "{}",
                    if t.0 >= b.names.len() { t } else { h }
                )));
            }
            ids.push(b.directed_ids(t, h, Coefficient::Free)?);
        }
        Ok((b.build()?, ids))
    }

    /// Keeps the first `keep` nodes and the edges among them; trailing empty
    /// edge slots are dropped.
    pub fn truncate_nodes(&self, keep: usize) -> Result<MixedGraph> {
        let keep = keep.min(self.n());
        let inside = |v: NodeId| v.0 < keep;
        let mut edges: Vec<Option<DirectedEdge>> = self
            .edges
            .iter()
            .map(|slot| slot.filter(|e| inside(e.tail) && inside(e.head)))
            .collect();
        while matches!(edges.last(), Some(None)) {
            edges.pop();
        }
        let bidirected = self
            .bidirected
            .iter()
            .copied()
            .filter(|&(a, b)| inside(a) && inside(b))
            .collect();
        MixedGraph::from_parts(self.names[..keep].to_vec(), edges, bidirected)
    }

    /// True when some collider-free path joins `a` and `b`.
    pub fn trek_connected(&self, a: NodeId, b: NodeId) -> bool {
        let an_a = self.ancestral_mask([a]);
        let an_b = self.ancestral_mask([b]);
        if (0..self.n()).any(|v| an_a[v] && an_b[v]) {
            return true;
        }
        self.bidirected
            .iter()
            .any(|&(u, v)| (an_a[u.0] && an_b[v.0]) || (an_a[v.0] && an_b[u.0]))
    }

    /// Partition of every node's incoming edges into connected edge sets:
    /// two edges share a cell when their tails are joined by a collider-free
    /// path. Cells are listed by their smallest edge id.
    pub fn connected_edge_sets(&self) -> Vec<EdgeSet> {
        let mut out = Vec::new();
        for &v in &self.topo {
            let inc = &self.incoming[v.0];
            let k = inc.len();
            let mut parent: Vec<usize> = (0..k).collect();
            fn find(p: &mut [usize], i: usize) -> usize {
                let mut r = i;
                while p[r] != r {
                    r = p[r];
                }
                p[i] = r;
                r
            }
            for i in 0..k {
                for j in (i + 1)..k {
                    let ti = self.edge_ref(inc[i]).tail;
                    let tj = self.edge_ref(inc[j]).tail;
                    if self.trek_connected(ti, tj) {
                        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                        parent[ri] = rj;
                    }
                }
            }
            let mut cells: BTreeMap<usize, EdgeSet> = BTreeMap::new();
            for (i, &e) in inc.iter().enumerate() {
                let r = find(&mut parent, i);
                cells.entry(r).or_default().insert(e);
            }
            out.extend(cells.into_values());
        }
        out.sort_by_key(|c| c.iter().next());
        out
    }

    /// Text form accepted by [`parse_graph`]: node declarations, then
    /// directed edges by id, then bidirected edges.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for name in &self.names {
            s.push_str(name);
            s.push('\n');
        }
        for e in self.directed_edges() {
            s.push_str(&format!("{} -> {}\n", self.name(e.tail), self.name(e.head)));
        }
        for &(a, b) in &self.bidirected {
            s.push_str(&format!("{} <-> {}\n", self.name(a), self.name(b)));
        }
        s
    }
}
