//! Quasi-instrumental sets: testing a candidate set and searching for one.
//!
//! An instrument `z` for the edges `E` into `y` is used either as is, or
//! through its auxiliary variable `z*`, which subtracts the known
//! coefficients of `z`'s incoming edges. The outcome always uses `y*`, which
//! subtracts the known coefficients of the other edges into `y`.

pub mod paths;

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use serde::Serialize;

pub use paths::{
    brito_ordering_exists, left_right, no_sided_intersection, sided_intersection, treks, Step,
    TrekPath,
};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, EdgeSet, MixedGraph, NodeId};
use crate::separation::{d_separated, exhaustive_separator, nearest_separator};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeparatorStrategy {
    Nearest,
    /// Subset enumeration; only for small graphs.
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    /// Largest edge set searched for.
    pub max_k: usize,
    /// Largest number of paths enumerated per instrument and target.
    pub path_cap: usize,
    pub separator: SeparatorStrategy,
    /// When false only empty conditioning sets are considered.
    pub allow_conditioning: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            max_k: 4,
            path_cap: 10_000,
            separator: SeparatorStrategy::Nearest,
            allow_conditioning: true,
        }
    }
}

/// Form of the condition tying the paths of a system together.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathCondition {
    NoSidedIntersection,
    BritoOrdering,
}

/// One instrument with its conditioning set and its path to a target tail.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuasiTriple {
    pub z: NodeId,
    pub aux: bool,
    /// Known incoming edges of `z` subtracted in `z*`; empty unless `aux`.
    pub subtracted: Vec<EdgeId>,
    pub given: Vec<NodeId>,
    pub target: EdgeId,
    pub path: TrekPath,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QisWitness {
    pub y: NodeId,
    pub edges: Vec<EdgeId>,
    /// Known incoming edges of `y` outside the target set, subtracted in `y*`.
    pub subtracted_y: Vec<EdgeId>,
    pub triples: Vec<QuasiTriple>,
}

impl QisWitness {
    pub fn instruments(&self) -> Vec<NodeId> {
        self.triples.iter().map(|t| t.z).collect()
    }
}

struct AuxView {
    subtracted: EdgeSet,
    separation: MixedGraph,
    paths: MixedGraph,
    forbidden: Vec<NodeId>,
}

struct Candidate {
    path: TrekPath,
    given: Vec<NodeId>,
    sides: (BTreeSet<NodeId>, BTreeSet<NodeId>),
}

struct Search<'a> {
    g: &'a MixedGraph,
    y: NodeId,
    edges: Vec<EdgeId>,
    tails: Vec<NodeId>,
    subtracted_y: Vec<EdgeId>,
    separation: MixedGraph,
    below_y: Vec<bool>,
    known: &'a EdgeSet,
    opts: &'a SearchOptions,
    views: HashMap<NodeId, Option<Rc<AuxView>>>,
    candidates: HashMap<(NodeId, bool, usize), Rc<Vec<Candidate>>>,
}

fn common_head(g: &MixedGraph, e: &EdgeSet) -> Result<NodeId> {
    g.check_edges(e)?;
    let heads = g.heads(e);
    match heads.len() {
        1 => Ok(*heads.iter().next().unwrap()),
        0 => Err(Error::Precondition("empty edge set".into())),
        _ => Err(Error::Precondition("edges do not share a head".into())),
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(k, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(k, &mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Calls `f` on every `k`-subset of `pool` in lexicographic order until it
/// returns `Some`.
fn first_combination<T>(
    pool: &[NodeId],
    k: usize,
    f: &mut dyn FnMut(&[NodeId]) -> Result<Option<T>>,
) -> Result<Option<T>> {
    if k > pool.len() {
        return Ok(None);
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let chosen: Vec<NodeId> = idx.iter().map(|&i| pool[i]).collect();
        if let Some(t) = f(&chosen)? {
            return Ok(Some(t));
        }
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(None);
            }
            i -= 1;
            if idx[i] != i + pool.len() - k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

impl<'a> Search<'a> {
    fn new(
        g: &'a MixedGraph,
        e: &EdgeSet,
        known: &'a EdgeSet,
        opts: &'a SearchOptions,
    ) -> Result<Self> {
        let search = Self::unbounded(g, e, known, opts)?;
        if e.len() > opts.max_k {
            return Err(Error::KBound {
                k: e.len(),
                max: opts.max_k,
            });
        }
        Ok(search)
    }

    fn unbounded(
        g: &'a MixedGraph,
        e: &EdgeSet,
        known: &'a EdgeSet,
        opts: &'a SearchOptions,
    ) -> Result<Self> {
        let y = common_head(g, e)?;
        let subtracted_y: Vec<EdgeId> = g
            .incoming(y)
            .iter()
            .copied()
            .filter(|&f| known.contains(f) && !e.contains(f))
            .collect();
        let removed: EdgeSet = e.iter().chain(subtracted_y.iter().copied()).collect();
        Ok(Search {
            g,
            y,
            edges: e.to_vec(),
            tails: g.tails(e),
            subtracted_y,
            separation: g.remove_edges(&removed)?,
            below_y: g.descendant_mask([y]),
            known,
            opts,
            views: HashMap::new(),
            candidates: HashMap::new(),
        })
    }

    fn k(&self) -> usize {
        self.edges.len()
    }

    /// Pool of possible instruments: everything except `y` and its descendants.
    fn pool(&self) -> Vec<NodeId> {
        self.g.nodes().filter(|v| !self.below_y[v.0]).collect()
    }

    /// The graphs and restrictions for `z*`, or `None` when `z` has no known
    /// incoming edge or `y` descends from `z` once the target edges are cut.
    fn view(&mut self, z: NodeId) -> Result<Option<Rc<AuxView>>> {
        if let Some(v) = self.views.get(&z) {
            return Ok(v.clone());
        }
        let subtracted: EdgeSet = self
            .g
            .incoming(z)
            .iter()
            .copied()
            .filter(|&f| self.known.contains(f))
            .collect();
        let below_z = self.separation.descendant_mask([z]);
        let view = if subtracted.is_empty() || below_z[self.y.0] || self.below_y[z.0] {
            None
        } else {
            let forbidden = self
                .g
                .nodes()
                .filter(|v| (self.below_y[v.0] || below_z[v.0]) && *v != z && *v != self.y)
                .collect();
            Some(Rc::new(AuxView {
                separation: self.separation.remove_edges(&subtracted)?,
                paths: self.g.remove_edges(&subtracted)?,
                subtracted,
                forbidden,
            }))
        };
        self.views.insert(z, view.clone());
        Ok(view)
    }

    fn separator(&self, h: &MixedGraph, z: NodeId, forbidden: &[NodeId]) -> Option<Vec<NodeId>> {
        if !self.opts.allow_conditioning {
            return d_separated(h, z, self.y, &[]).ok()?.then(Vec::new);
        }
        match self.opts.separator {
            SeparatorStrategy::Nearest => nearest_separator(h, self.y, z, forbidden),
            SeparatorStrategy::Exhaustive => exhaustive_separator(h, self.y, z, forbidden),
        }
    }

    /// Paths from `z` (or `z*`) to the `target`-th tail, each paired with a
    /// separator that leaves it open.
    fn candidates(&mut self, z: NodeId, aux: bool, target: usize) -> Result<Rc<Vec<Candidate>>> {
        if let Some(c) = self.candidates.get(&(z, aux, target)) {
            return Ok(c.clone());
        }
        let mut out = Vec::new();
        if z != self.y && !self.below_y[z.0] {
            let view = if aux { self.view(z)? } else { None };
            if !aux || view.is_some() {
                let (sep_graph, path_graph, base): (&MixedGraph, &MixedGraph, Vec<NodeId>) =
                    match &view {
                        Some(v) => (&v.separation, &v.paths, v.forbidden.clone()),
                        None => (
                            &self.separation,
                            self.g,
                            self.g
                                .nodes()
                                .filter(|v| self.below_y[v.0] && *v != self.y)
                                .collect(),
                        ),
                    };
                let paths = treks(
                    path_graph,
                    z,
                    self.tails[target],
                    &[self.y],
                    self.opts.path_cap,
                )?;
                let mut memo: HashMap<Vec<NodeId>, Option<Vec<NodeId>>> = HashMap::new();
                for path in paths {
                    let mut forbidden = base.clone();
                    forbidden.extend(path.nodes.iter().copied());
                    forbidden.sort();
                    forbidden.dedup();
                    let given = memo
                        .entry(forbidden.clone())
                        .or_insert_with(|| self.separator(sep_graph, z, &forbidden))
                        .clone();
                    if let Some(given) = given {
                        let sides = left_right(&path).expect("enumerated paths are treks");
                        out.push(Candidate { path, given, sides });
                    }
                }
            }
        }
        let out = Rc::new(out);
        self.candidates.insert((z, aux, target), out.clone());
        Ok(out)
    }

    fn run(
        &mut self,
        z: &[NodeId],
        aux: &[bool],
        condition: PathCondition,
    ) -> Result<Option<QisWitness>> {
        let k = self.k();
        for perm in permutations(k) {
            let mut lists = Vec::with_capacity(k);
            for i in 0..k {
                lists.push(self.candidates(z[i], aux[i], perm[i])?);
            }
            if lists.iter().any(|l| l.is_empty()) {
                continue;
            }
            let mut chosen: Vec<usize> = Vec::with_capacity(k);
            let targets: Vec<EdgeId> = perm.iter().map(|&j| self.edges[j]).collect();
            if self.pick(&lists, &mut chosen, condition, &targets) {
                let mut triples = Vec::with_capacity(k);
                for i in 0..k {
                    let c = &lists[i][chosen[i]];
                    let subtracted = if aux[i] {
                        self.view(z[i])?
                            .map(|v| v.subtracted.to_vec())
                            .unwrap_or_default()
                    } else {
                        Vec::new()
                    };
                    triples.push(QuasiTriple {
                        z: z[i],
                        aux: aux[i],
                        subtracted,
                        given: c.given.clone(),
                        target: targets[i],
                        path: c.path.clone(),
                    });
                }
                return Ok(Some(QisWitness {
                    y: self.y,
                    edges: self.edges.clone(),
                    subtracted_y: self.subtracted_y.clone(),
                    triples,
                }));
            }
        }
        Ok(None)
    }

    fn pick(
        &self,
        lists: &[Rc<Vec<Candidate>>],
        chosen: &mut Vec<usize>,
        condition: PathCondition,
        targets: &[EdgeId],
    ) -> bool {
        let i = chosen.len();
        if i == lists.len() {
            return match condition {
                PathCondition::NoSidedIntersection => true,
                PathCondition::BritoOrdering => {
                    let paths: Vec<TrekPath> = chosen
                        .iter()
                        .enumerate()
                        .map(|(r, &c)| lists[r][c].path.clone())
                        .collect();
                    brito_ordering_exists(&paths, targets, self.y)
                }
            };
        }
        for (c, cand) in lists[i].iter().enumerate() {
            if condition == PathCondition::NoSidedIntersection
                && chosen
                    .iter()
                    .enumerate()
                    .any(|(r, &o)| sided_intersection(&lists[r][o].sides, &cand.sides))
            {
                continue;
            }
            chosen.push(c);
            if self.pick(lists, chosen, condition, targets) {
                return true;
            }
            chosen.pop();
        }
        false
    }
}

fn check_instruments(g: &MixedGraph, y: NodeId, z: &[NodeId]) -> Result<()> {
    if let Some(bad) = z.iter().find(|v| !g.contains(**v)) {
        return Err(Error::UnknownNode(format!("{bad}")));
    }
    if z.contains(&y) {
        return Err(Error::Precondition(
            "the outcome cannot be its own instrument".into(),
        ));
    }
    let distinct: BTreeSet<_> = z.iter().collect();
    if distinct.len() != z.len() {
        return Err(Error::Precondition("instruments must be distinct".into()));
    }
    Ok(())
}

/// Tests whether `z` (with `aux[i]` selecting `z_i*`) is a quasi-instrumental
/// set for the edges `e`, given the edges whose coefficients are `known`.
pub fn test_qis(
    g: &MixedGraph,
    e: &EdgeSet,
    z: &[NodeId],
    aux: &[bool],
    known: &EdgeSet,
    opts: &SearchOptions,
) -> Result<Option<QisWitness>> {
    if z.len() != e.len() || aux.len() != e.len() {
        return Err(Error::Precondition(format!(
            "{} edges, {} instruments and {} auxiliary flags",
            e.len(),
            z.len(),
            aux.len()
        )));
    }
    let mut search = Search::new(g, e, known, opts)?;
    check_instruments(g, search.y, z)?;
    search.run(z, aux, PathCondition::NoSidedIntersection)
}

/// First quasi-instrumental set for `e`: instrument sets in lexicographic
/// node order, then auxiliary choices in binary counting order.
pub fn find_qis(
    g: &MixedGraph,
    e: &EdgeSet,
    known: &EdgeSet,
    opts: &SearchOptions,
) -> Result<Option<QisWitness>> {
    let mut search = Search::new(g, e, known, opts)?;
    let k = search.k();
    let pool = search.pool();
    first_combination(&pool, k, &mut |z| {
        for bits in 0..(1usize << k) {
            let aux: Vec<bool> = (0..k).map(|i| bits >> (k - 1 - i) & 1 == 1).collect();
            let mut usable = true;
            for i in 0..k {
                if aux[i] && search.view(z[i])?.is_none() {
                    usable = false;
                }
            }
            if !usable {
                continue;
            }
            if let Some(w) = search.run(z, &aux, PathCondition::NoSidedIntersection)? {
                return Ok(Some(w));
            }
        }
        Ok(None)
    })
}

/// A single instrument `s` (or `s*`, tried second) for the outcome of
/// `alpha`: separable from the outcome once `alpha` is cut, with an open path
/// to one of the tails. The first tail in edge order that works is used.
pub fn single_instrument(
    g: &MixedGraph,
    alpha: &EdgeSet,
    s: NodeId,
    known: &EdgeSet,
    opts: &SearchOptions,
) -> Result<Option<QuasiTriple>> {
    let mut search = Search::unbounded(g, alpha, known, opts)?;
    check_instruments(g, search.y, &[s])?;
    for aux in [false, true] {
        for target in 0..search.k() {
            let found = search.candidates(s, aux, target)?;
            if let Some(c) = found.first() {
                let subtracted = if aux {
                    search
                        .view(s)?
                        .map(|v| v.subtracted.to_vec())
                        .unwrap_or_default()
                } else {
                    Vec::new()
                };
                return Ok(Some(QuasiTriple {
                    z: s,
                    aux,
                    subtracted,
                    given: c.given.clone(),
                    target: search.edges[target],
                    path: c.path.clone(),
                }));
            }
        }
    }
    Ok(None)
}

/// Whether some plain instrumental set for `e` exists whose paths satisfy
/// `condition`.
pub fn instrumental_set_exists(
    g: &MixedGraph,
    e: &EdgeSet,
    condition: PathCondition,
    opts: &SearchOptions,
) -> Result<Option<QisWitness>> {
    let none = EdgeSet::new();
    let mut search = Search::new(g, e, &none, opts)?;
    let k = search.k();
    let pool = search.pool();
    let aux = vec![false; k];
    first_combination(&pool, k, &mut |z| search.run(z, &aux, condition))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;

    const AUX_IV: &str =
        "s -> t\nt -> x\nt <-> y\nx <-> t\ns <-> y\nx -> y\nx <-> w1\nw1 -> y\nw1 -> w2\nw2 -> y";

    fn edge(g: &MixedGraph, a: &str, b: &str) -> EdgeId {
        g.find_edge(g.node(a).unwrap(), g.node(b).unwrap()).unwrap()
    }

    fn set(es: &[EdgeId]) -> EdgeSet {
        es.iter().copied().collect()
    }

    #[test]
    fn two_ivs_plain_instrument() {
        let g = parse_graph("z1 -> x\nz2 -> x\nx -> y\nx <-> y").unwrap();
        let e = set(&[edge(&g, "x", "y")]);
        let z1 = g.node("z1").unwrap();
        let w = test_qis(
            &g,
            &e,
            &[z1],
            &[false],
            &EdgeSet::new(),
            &SearchOptions::default(),
        )
        .unwrap()
        .unwrap();
        assert_eq!(w.triples[0].given, Vec::<NodeId>::new());
        let found = find_qis(&g, &e, &EdgeSet::new(), &SearchOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(found.instruments(), vec![z1]);
    }

    #[test]
    fn aux_iv_auxiliary_instrument_given_w1() {
        let g = parse_graph(AUX_IV).unwrap();
        let e = set(&[edge(&g, "x", "y")]);
        let known = set(&[edge(&g, "t", "x")]);
        let x = g.node("x").unwrap();
        let opts = SearchOptions::default();
        let w = test_qis(&g, &e, &[x], &[true], &known, &opts)
            .unwrap()
            .unwrap();
        assert_eq!(w.triples[0].given, vec![g.node("w1").unwrap()]);
        assert!(test_qis(&g, &e, &[x], &[false], &known, &opts)
            .unwrap()
            .is_none());
        assert!(test_qis(&g, &e, &[x], &[true], &EdgeSet::new(), &opts)
            .unwrap()
            .is_none());
        assert!(find_qis(&g, &e, &EdgeSet::new(), &opts).unwrap().is_none());
        let beta = set(&[edge(&g, "t", "x")]);
        let w = find_qis(&g, &beta, &EdgeSet::new(), &opts)
            .unwrap()
            .unwrap();
        assert_eq!(w.instruments(), vec![g.node("s").unwrap()]);
    }

    #[test]
    fn child_of_outcome_is_never_an_instrument() {
        let g = parse_graph("x -> y\ny -> c\nx <-> y").unwrap();
        let e = set(&[edge(&g, "x", "y")]);
        let c = g.node("c").unwrap();
        let opts = SearchOptions::default();
        assert!(test_qis(&g, &e, &[c], &[false], &EdgeSet::new(), &opts)
            .unwrap()
            .is_none());
        assert!(find_qis(&g, &e, &EdgeSet::new(), &opts).unwrap().is_none());
    }

    #[test]
    fn structural_errors() {
        let g = parse_graph("z -> x\nx -> y\na -> b").unwrap();
        let opts = SearchOptions::default();
        let e = set(&[edge(&g, "x", "y")]);
        let z = g.node("z").unwrap();
        assert!(test_qis(&g, &e, &[z], &[], &EdgeSet::new(), &opts).is_err());
        let y = g.node("y").unwrap();
        assert!(test_qis(&g, &e, &[y], &[false], &EdgeSet::new(), &opts).is_err());
        let mixed = set(&[edge(&g, "x", "y"), edge(&g, "a", "b")]);
        assert!(find_qis(&g, &mixed, &EdgeSet::new(), &opts).is_err());
        let tight = SearchOptions {
            max_k: 0,
            ..SearchOptions::default()
        };
        assert!(matches!(
            find_qis(&g, &e, &EdgeSet::new(), &tight),
            Err(Error::KBound { k: 1, max: 0 })
        ));
    }

    #[test]
    fn joint_instruments_need_disjoint_sides() {
        let g = parse_graph("z1 -> x1\nz2 -> x2\nx1 -> y\nx2 -> y\nx1 <-> y\nx2 <-> y\nx1 <-> x2")
            .unwrap();
        let e = set(&[edge(&g, "x1", "y"), edge(&g, "x2", "y")]);
        let opts = SearchOptions::default();
        let w = find_qis(&g, &e, &EdgeSet::new(), &opts).unwrap().unwrap();
        assert_eq!(
            w.instruments(),
            vec![g.node("z1").unwrap(), g.node("z2").unwrap()]
        );
        let shared =
            parse_graph("z1 -> x1\nz1 -> x2\nx1 -> y\nx2 -> y\nx1 <-> y\nx2 <-> y").unwrap();
        let e = set(&[edge(&shared, "x1", "y"), edge(&shared, "x2", "y")]);
        assert!(find_qis(&shared, &e, &EdgeSet::new(), &opts)
            .unwrap()
            .is_none());
    }

    #[test]
    fn bidirected_instrument_outside_ancestors() {
        let g = parse_graph("z <-> x\nx -> y").unwrap();
        let e = set(&[edge(&g, "x", "y")]);
        let w = find_qis(&g, &e, &EdgeSet::new(), &SearchOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(w.instruments(), vec![g.node("z").unwrap()]);
    }

    #[test]
    fn unconditioned_mode_rejects_conditioning() {
        let g = parse_graph("z -> x\nx -> y\nz <-> w\nw -> y\nx <-> y").unwrap();
        let e = set(&[edge(&g, "x", "y")]);
        let opts = SearchOptions::default();
        let z = g.node("z").unwrap();
        let w = test_qis(&g, &e, &[z], &[false], &EdgeSet::new(), &opts)
            .unwrap()
            .unwrap();
        assert_eq!(w.triples[0].given, vec![g.node("w").unwrap()]);
        let simple = SearchOptions {
            allow_conditioning: false,
            ..opts
        };
        assert!(test_qis(&g, &e, &[z], &[false], &EdgeSet::new(), &simple)
            .unwrap()
            .is_none());
    }
}
