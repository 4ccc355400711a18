//! Fixed-point identification over connected edge sets.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::ops::Mul;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{bilinear_cov, CovExpr};
use crate::graph::{EdgeId, EdgeSet, KnownValue, MixedGraph, NodeId};
use crate::instrumental::{find_qis, QisWitness, SearchOptions};
use crate::oracle::{implied_sigma, sample_params};

/// Values for symbolic known coefficients.
pub type Bindings = BTreeMap<String, f64>;

#[derive(Clone, Debug, PartialEq)]
pub enum EdgeStatus {
    /// Not identified by this method.
    Unknown,
    /// Not identified, and some search for it was cut short by a budget.
    Undecided,
    Known(KnownValue),
    Identified {
        formula: CovExpr,
        round: usize,
    },
}

/// One successful search: the edges solved jointly and how.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdEvent {
    pub round: usize,
    pub edges: Vec<EdgeId>,
    /// Edges of `edges` that were not identified before this event.
    pub new: Vec<EdgeId>,
    pub witness: QisWitness,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationState {
    status: BTreeMap<EdgeId, EdgeStatus>,
    pub events: Vec<IdEvent>,
    pub diagnostics: Vec<(EdgeId, String)>,
}

impl IdentificationState {
    /// Every directed edge unknown except the declared ones.
    pub fn new(g: &MixedGraph, known: &[(EdgeId, KnownValue)]) -> Result<Self> {
        let mut status: BTreeMap<EdgeId, EdgeStatus> = g
            .directed_edges()
            .map(|e| (e.id, EdgeStatus::Unknown))
            .collect();
        for (e, v) in known {
            match status.get_mut(e) {
                Some(s) => *s = EdgeStatus::Known(v.clone()),
                None => return Err(Error::InvalidEdge(e.0)),
            }
        }
        Ok(IdentificationState {
            status,
            events: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    pub fn status(&self, e: EdgeId) -> Option<&EdgeStatus> {
        self.status.get(&e)
    }

    pub fn statuses(&self) -> impl Iterator<Item = (EdgeId, &EdgeStatus)> {
        self.status.iter().map(|(e, s)| (*e, s))
    }

    pub fn formula(&self, e: EdgeId) -> Option<&CovExpr> {
        match self.status.get(&e) {
            Some(EdgeStatus::Identified { formula, .. }) => Some(formula),
            _ => None,
        }
    }

    pub fn round(&self, e: EdgeId) -> Option<usize> {
        match self.status.get(&e) {
            Some(EdgeStatus::Identified { round, .. }) => Some(*round),
            _ => None,
        }
    }

    pub fn is_available(&self, e: EdgeId) -> bool {
        matches!(
            self.status.get(&e),
            Some(EdgeStatus::Known(_) | EdgeStatus::Identified { .. })
        )
    }

    /// Edges whose coefficients are known or identified.
    pub fn available(&self) -> EdgeSet {
        self.status
            .keys()
            .copied()
            .filter(|&e| self.is_available(e))
            .collect()
    }

    pub fn identified(&self) -> Vec<EdgeId> {
        self.status
            .keys()
            .copied()
            .filter(|&e| self.formula(e).is_some())
            .collect()
    }

    pub fn set_formula(&mut self, e: EdgeId, formula: CovExpr, round: usize) {
        self.status
            .insert(e, EdgeStatus::Identified { formula, round });
    }

    /// `f` with every identified coefficient replaced by its own formula, so
    /// only covariances and known coefficients remain.
    pub fn inline(&self, f: &CovExpr) -> CovExpr {
        let mut memo: HashMap<EdgeId, CovExpr> = HashMap::new();
        self.inline_memo(f, &mut memo)
    }

    fn inline_memo(&self, f: &CovExpr, memo: &mut HashMap<EdgeId, CovExpr>) -> CovExpr {
        f.map_coefs(&mut |e| {
            if let Some(done) = memo.get(&e) {
                return done.clone();
            }
            let out = match self.formula(e) {
                Some(inner) => self.inline_memo(inner, memo),
                None => CovExpr::coef(e),
            };
            memo.insert(e, out.clone());
            out
        })
    }

    pub fn resolver<'a>(
        &'a self,
        g: &'a MixedGraph,
        sigma: &'a DMatrix<f64>,
        bindings: &'a Bindings,
    ) -> Resolver<'a> {
        Resolver {
            state: self,
            g,
            sigma,
            bindings,
            memo: RefCell::new(HashMap::new()),
        }
    }
}

/// Numeric values of coefficients at one covariance matrix.
pub struct Resolver<'a> {
    state: &'a IdentificationState,
    g: &'a MixedGraph,
    sigma: &'a DMatrix<f64>,
    bindings: &'a Bindings,
    memo: RefCell<HashMap<EdgeId, f64>>,
}

impl Resolver<'_> {
    pub fn coef(&self, e: EdgeId) -> Result<f64> {
        if let Some(v) = self.memo.borrow().get(&e) {
            return Ok(*v);
        }
        let v = match self.state.status(e) {
            Some(EdgeStatus::Known(KnownValue::Number(v))) => *v,
            Some(EdgeStatus::Known(KnownValue::Symbol(s))) => *self
                .bindings
                .get(s)
                .ok_or_else(|| Error::Unbound(s.clone()))?,
            Some(EdgeStatus::Identified { formula, .. }) => {
                formula.eval(self.sigma, &|f| self.coef(f))?
            }
            _ => return Err(Error::Unbound(self.g.edge_label(e))),
        };
        self.memo.borrow_mut().insert(e, v);
        Ok(v)
    }

    pub fn eval(&self, f: &CovExpr) -> Result<f64> {
        f.eval(self.sigma, &|e| self.coef(e))
    }

    pub fn leaf_scale(&self, f: &CovExpr) -> Result<f64> {
        f.leaf_scale(self.sigma, &|e| self.coef(e))
    }
}

pub fn evaluate_formula(
    g: &MixedGraph,
    f: &CovExpr,
    sigma: &DMatrix<f64>,
    state: &IdentificationState,
    bindings: &Bindings,
) -> Result<f64> {
    state.resolver(g, sigma, bindings).eval(f)
}

fn weighted(g: &MixedGraph, v: NodeId, subtracted: &[EdgeId]) -> Vec<(CovExpr, NodeId)> {
    let mut terms = vec![(CovExpr::Lit(1.0), v)];
    for &e in subtracted {
        let tail = g.edge(e).expect("subtracted edge").tail;
        terms.push((CovExpr::Lit(-1.0).mul(CovExpr::coef(e)), tail));
    }
    terms
}

/// Rows `σ(z_i*, x_j | W_i)` and right-hand side `σ(z_i*, y* | W_i)`, with
/// the auxiliary variables expanded into model variables.
pub fn build_system(
    g: &MixedGraph,
    w: &QisWitness,
    state: &IdentificationState,
) -> (Vec<Vec<CovExpr>>, Vec<CovExpr>) {
    for e in w
        .subtracted_y
        .iter()
        .chain(w.triples.iter().flat_map(|t| &t.subtracted))
    {
        assert!(
            state.is_available(*e),
            "system subtracts an unavailable coefficient"
        );
    }
    let tails: Vec<NodeId> = w
        .edges
        .iter()
        .map(|&e| g.edge(e).expect("target edge").tail)
        .collect();
    let y_terms = weighted(g, w.y, &w.subtracted_y);
    let mut a = Vec::with_capacity(w.triples.len());
    let mut b = Vec::with_capacity(w.triples.len());
    for t in &w.triples {
        let z_terms = weighted(g, t.z, &t.subtracted);
        a.push(
            tails
                .iter()
                .map(|&x| bilinear_cov(&z_terms, &[(CovExpr::Lit(1.0), x)], &t.given))
                .collect(),
        );
        b.push(bilinear_cov(&z_terms, &y_terms, &t.given));
    }
    (a, b)
}

pub fn solve_system(a: Vec<Vec<CovExpr>>, b: Vec<CovExpr>) -> Vec<CovExpr> {
    CovExpr::solve(a, b)
}

/// Subsets of `cell` from largest to smallest, lexicographic by edge id
/// within a size.
fn subsets_by_size(cell: &EdgeSet) -> Vec<EdgeSet> {
    let items = cell.to_vec();
    let m = items.len();
    let mut out = Vec::new();
    for size in (1..=m).rev() {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| items[i]).collect());
            let mut i = size;
            let mut advanced = false;
            while i > 0 {
                i -= 1;
                if idx[i] != i + m - size {
                    idx[i] += 1;
                    for j in i + 1..size {
                        idx[j] = idx[j - 1] + 1;
                    }
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
    }
    out
}

/// Identifies as many coefficients as possible, sweeping the connected edge
/// sets until a sweep identifies nothing new.
pub fn qid(
    g: &MixedGraph,
    known: &[(EdgeId, KnownValue)],
    opts: &SearchOptions,
) -> Result<IdentificationState> {
    let mut state = IdentificationState::new(g, known)?;
    let cells = g.connected_edge_sets();
    let mut budget_hit: Vec<EdgeId> = Vec::new();
    let mut round = 0;
    loop {
        round += 1;
        let mut progress = false;
        for cell in &cells {
            if cell.is_subset(&state.available()) {
                continue;
            }
            for e in subsets_by_size(cell) {
                let avail = state.available();
                if e.is_subset(&avail) {
                    continue;
                }
                let witness = match find_qis(g, &e, &avail, opts) {
                    Ok(Some(w)) => w,
                    Ok(None) => continue,
                    Err(err) if err.is_budget() => {
                        budget_hit.extend(e.iter().filter(|&x| !avail.contains(x)));
                        continue;
                    }
                    Err(err) => return Err(err),
                };
                let (a, b) = build_system(g, &witness, &state);
                let solution = solve_system(a, b);
                let mut new = Vec::new();
                for (&edge, formula) in witness.edges.iter().zip(solution) {
                    if !state.is_available(edge) {
                        state.set_formula(edge, formula, round);
                        new.push(edge);
                    }
                }
                progress |= !new.is_empty();
                state.events.push(IdEvent {
                    round,
                    edges: witness.edges.clone(),
                    new,
                    witness,
                });
            }
        }
        let done = g.directed_edges().all(|e| state.is_available(e.id));
        if !progress || done {
            break;
        }
    }
    for e in budget_hit {
        if let Some(s @ EdgeStatus::Unknown) = state.status.get_mut(&e) {
            *s = EdgeStatus::Undecided;
        }
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeCheck {
    pub edge: EdgeId,
    pub trials: usize,
    /// Trials where evaluation failed or missed the true value.
    pub failures: usize,
    pub degenerate: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub trials: usize,
    pub tol: f64,
    pub edges: Vec<EdgeCheck>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.edges.iter().all(|c| c.passed)
    }
}

/// Seed of trial `t` of a verification started from `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(t as u64)
}

/// Parameters for one trial: sampled, with declared numeric values imposed
/// and symbolic ones bound to the sampled coefficient.
pub fn trial_params(
    g: &MixedGraph,
    state: &IdentificationState,
    seed: u64,
) -> (crate::oracle::ParamAssignment, Bindings) {
    let mut p = sample_params(g, seed);
    let mut bindings = Bindings::new();
    for (e, s) in state.statuses() {
        match s {
            EdgeStatus::Known(KnownValue::Number(v)) => p.lambda[e.0] = *v,
            EdgeStatus::Known(KnownValue::Symbol(name)) => {
                bindings.entry(name.clone()).or_insert(p.lambda[e.0]);
            }
            _ => {}
        }
    }
    for (e, s) in state.statuses() {
        if let EdgeStatus::Known(KnownValue::Symbol(name)) = s {
            p.lambda[e.0] = bindings[name];
        }
    }
    (p, bindings)
}

/// Evaluates every identified formula at exact covariance matrices of
/// `trials` random parameter draws and compares with the true coefficients.
/// An edge passes when at most one trial fails.
pub fn verify_identification(
    g: &MixedGraph,
    state: &IdentificationState,
    trials: usize,
    tol: f64,
    seed: u64,
) -> VerifyReport {
    let ids = state.identified();
    let mut checks: Vec<EdgeCheck> = ids
        .iter()
        .map(|&edge| EdgeCheck {
            edge,
            trials,
            failures: 0,
            degenerate: 0,
            max_rel_error: 0.0,
            passed: true,
        })
        .collect();
    for t in 0..trials {
        let (p, bindings) = trial_params(g, state, trial_seed(seed, t));
        let s = implied_sigma(g, &p);
        let resolver = state.resolver(g, &s.sigma, &bindings);
        for c in checks.iter_mut() {
            let truth = p.coef(c.edge);
            match resolver.coef(c.edge) {
                Ok(v) => {
                    let err = (v - truth).abs() / truth.abs().max(f64::MIN_POSITIVE);
                    c.max_rel_error = c.max_rel_error.max(err);
                    if err.is_nan() || err > tol {
                        c.failures += 1;
                    }
                }
                Err(Error::Degenerate(_)) | Err(Error::SingularConditioning) => {
                    c.failures += 1;
                    c.degenerate += 1;
                }
                Err(_) => c.failures += 1,
            }
        }
    }
    for c in checks.iter_mut() {
        c.passed = c.failures <= 1;
    }
    VerifyReport {
        trials,
        tol,
        edges: checks,
    }
}

/// Downgrades edges that failed verification, and then any edge whose
/// formula depends on an edge that is no longer available.
pub fn apply_verification(g: &MixedGraph, state: &mut IdentificationState, report: &VerifyReport) {
    for c in report.edges.iter().filter(|c| !c.passed) {
        state.status.insert(c.edge, EdgeStatus::Unknown);
        state.diagnostics.push((
            c.edge,
            format!(
                "formula failed numeric verification in {} of {} trials",
                c.failures, c.trials
            ),
        ));
    }
    loop {
        let broken: Vec<EdgeId> = state
            .identified()
            .into_iter()
            .filter(|&e| {
                state
                    .formula(e)
                    .unwrap()
                    .coefs()
                    .iter()
                    .any(|&f| !state.is_available(f))
            })
            .collect();
        if broken.is_empty() {
            break;
        }
        for e in broken {
            state.status.insert(e, EdgeStatus::Unknown);
            state.diagnostics.push((
                e,
                format!(
                    "depends on a coefficient that was withdrawn ({})",
                    g.edge_label(e)
                ),
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;
    use std::ops::Div;

    fn edge(g: &MixedGraph, a: &str, b: &str) -> EdgeId {
        g.find_edge(g.node(a).unwrap(), g.node(b).unwrap()).unwrap()
    }

    fn opts() -> SearchOptions {
        SearchOptions::default()
    }

    #[test]
    fn subset_order() {
        let cell: EdgeSet = [EdgeId(1), EdgeId(4), EdgeId(7)].into_iter().collect();
        let order: Vec<Vec<usize>> = subsets_by_size(&cell)
            .iter()
            .map(|s| s.iter().map(|e| e.0).collect())
            .collect();
        assert_eq!(
            order,
            vec![
                vec![1, 4, 7],
                vec![1, 4],
                vec![1, 7],
                vec![4, 7],
                vec![1],
                vec![4],
                vec![7]
            ]
        );
    }

    #[test]
    fn chain_with_confounded_outcome() {
        let g = parse_graph("z -> x\nx -> y\nx <-> y").unwrap();
        let state = qid(&g, &[], &opts()).unwrap();
        assert_eq!(state.identified().len(), 2);
        let f = state.formula(edge(&g, "x", "y")).unwrap();
        assert_eq!(f.to_sexpr(&g), "(div (cov z y) (cov z x))");
        let r = verify_identification(&g, &state, 50, 1e-6, 1);
        assert!(r.all_passed(), "{r:?}");
    }

    #[test]
    fn bow_is_not_identified() {
        let g = parse_graph("x -> y\nx <-> y").unwrap();
        let state = qid(&g, &[], &opts()).unwrap();
        assert_eq!(state.status(EdgeId(0)), Some(&EdgeStatus::Unknown));
        assert!(verify_identification(&g, &state, 10, 1e-6, 0)
            .edges
            .is_empty());
    }

    #[test]
    fn single_door_uses_the_tail_itself() {
        let g = parse_graph("x -> y").unwrap();
        let state = qid(&g, &[], &opts()).unwrap();
        assert_eq!(
            state.formula(EdgeId(0)).unwrap().to_sexpr(&g),
            "(div (cov x y) (cov x x))"
        );
    }

    #[test]
    fn known_coefficient_enables_quasi_instrument() {
        let g = parse_graph("z -> x\nz -> y\nx -> y\nx <-> y").unwrap();
        let gamma = edge(&g, "z", "y");
        let alpha = edge(&g, "x", "y");
        let without = qid(&g, &[], &opts()).unwrap();
        assert_eq!(without.status(alpha), Some(&EdgeStatus::Unknown));
        let with = qid(&g, &[(gamma, KnownValue::Symbol("gamma".into()))], &opts()).unwrap();
        assert!(with.formula(alpha).is_some());
        let r = verify_identification(&g, &with, 50, 1e-6, 3);
        assert!(r.all_passed(), "{r:?}");
        let numeric = qid(&g, &[(gamma, KnownValue::Number(0.4))], &opts()).unwrap();
        assert!(verify_identification(&g, &numeric, 20, 1e-6, 3).all_passed());
    }

    #[test]
    fn corrupted_formula_fails_verification() {
        let g = parse_graph("z -> x\nx -> y\nx <-> y").unwrap();
        let mut state = qid(&g, &[], &opts()).unwrap();
        let (z, y) = (g.node("z").unwrap(), g.node("y").unwrap());
        let alpha = edge(&g, "x", "y");
        let wrong = CovExpr::cov(z, y, &[]).div(CovExpr::cov(z, z, &[]));
        state.set_formula(alpha, wrong, 1);
        let r = verify_identification(&g, &state, 50, 1e-6, 5);
        let c = r.edges.iter().find(|c| c.edge == alpha).unwrap();
        assert!(c.failures >= 49, "{c:?}");
        apply_verification(&g, &mut state, &r);
        assert_eq!(state.status(alpha), Some(&EdgeStatus::Unknown));
        assert_eq!(state.diagnostics.len(), 1);
    }

    #[test]
    fn degenerate_evaluation_is_reported() {
        let g = parse_graph("z1 -> x\nz2 -> x\nx -> y\nx <-> y").unwrap();
        let state = qid(&g, &[], &opts()).unwrap();
        let f = state.formula(edge(&g, "x", "y")).unwrap();
        let mut s = implied_sigma(&g, &sample_params(&g, 0)).sigma;
        let (z1, x) = (0, 1);
        s[(z1, x)] = 0.0;
        s[(x, z1)] = 0.0;
        let err = evaluate_formula(&g, f, &s, &state, &Bindings::new()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err:?}");
    }

    #[test]
    fn unbound_symbol_is_an_error() {
        let g = parse_graph("z -> x\nz -> y\nx -> y\nx <-> y").unwrap();
        let gamma = edge(&g, "z", "y");
        let state = qid(&g, &[(gamma, KnownValue::Symbol("g".into()))], &opts()).unwrap();
        let f = state.formula(edge(&g, "x", "y")).unwrap();
        let s = implied_sigma(&g, &sample_params(&g, 0)).sigma;
        assert_eq!(
            evaluate_formula(&g, f, &s, &state, &Bindings::new()),
            Err(Error::Unbound("g".into()))
        );
    }

    #[test]
    fn tight_budget_marks_edges_undecided() {
        let g = parse_graph("z -> x\nx -> y\nx <-> y").unwrap();
        let tight = SearchOptions {
            path_cap: 0,
            ..opts()
        };
        let state = qid(&g, &[], &tight).unwrap();
        assert_eq!(
            state.status(edge(&g, "x", "y")),
            Some(&EdgeStatus::Undecided)
        );
        assert!(state.formula(edge(&g, "z", "x")).is_some());
    }
}
