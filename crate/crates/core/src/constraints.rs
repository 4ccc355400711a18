//! Overidentifying constraints implied by extra instruments.
//!
//! Once the coefficients of `alpha` (edges into `y`) are available, any
//! further instrument `s` that is separable from `y` once `alpha` is cut, and
//! that reaches a tail of `alpha`, gives a second equation
//! `σ(s*, x | W) · alpha = σ(s*, y* | W)` which the model must satisfy.

use std::collections::BTreeSet;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{bilinear_cov, CovExpr};
use crate::graph::{EdgeId, EdgeSet, KnownValue, MixedGraph, NodeId};
use crate::identify::{qid, Bindings, EdgeStatus, IdentificationState};
use crate::instrumental::{single_instrument, test_qis, QuasiTriple, SearchOptions};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ConstraintWitness {
    pub edges: Vec<EdgeId>,
    pub instruments: Vec<NodeId>,
    pub s: NodeId,
    pub given: Vec<NodeId>,
    pub aux: bool,
    /// Known incoming edges of `s` subtracted in `s*`.
    pub subtracted: Vec<EdgeId>,
    /// Available incoming edges of the outcome outside `edges`, subtracted in `y*`.
    pub subtracted_y: Vec<EdgeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub lhs: CovExpr,
    pub rhs: CovExpr,
    pub witness: ConstraintWitness,
}

impl Constraint {
    pub fn residual_expr(&self) -> CovExpr {
        self.lhs.clone().sub(self.rhs.clone())
    }

    pub fn to_sexpr(&self, g: &MixedGraph) -> String {
        format!("(= {} {})", self.lhs.to_sexpr(g), self.rhs.to_sexpr(g))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Residual {
    pub value: f64,
    /// Largest absolute leaf value of the constraint.
    pub scale: f64,
}

impl Residual {
    pub fn relative(&self) -> f64 {
        self.value.abs() / self.scale.max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
    /// Candidates skipped because a search exceeded its budget.
    pub undecided: Vec<String>,
}

/// Conditions for `s` to overidentify `alpha` beyond the instruments `z`:
/// returns the conditioning set and whether `s*` is used.
pub fn overid_conditions(
    g: &MixedGraph,
    alpha: &EdgeSet,
    z: &[NodeId],
    s: NodeId,
    known: &EdgeSet,
    opts: &SearchOptions,
) -> Result<Option<(Vec<NodeId>, bool)>> {
    if z.contains(&s) {
        return Err(Error::Precondition(format!(
            "{} is already one of the instruments",
            g.name(s)
        )));
    }
    Ok(single_instrument(g, alpha, s, known, opts)?.map(|t| (t.given, t.aux)))
}

/// Whether `w` is an instrument for the edge `n -> y` in the graph where the
/// edges `e` into `y` are replaced by a fresh node `n` between their tails
/// and `y`.
pub fn is_eiv(
    g: &MixedGraph,
    w: NodeId,
    e: &EdgeSet,
    known: &EdgeSet,
    opts: &SearchOptions,
) -> Result<bool> {
    g.check_edges(e)?;
    if !g.contains(w) {
        return Err(Error::UnknownNode(format!("{w}")));
    }
    let heads = g.heads(e);
    if heads.len() != 1 {
        return Err(Error::Precondition("edges must share one head".into()));
    }
    let y = *heads.iter().next().unwrap();
    if w == y {
        return Err(Error::Precondition(
            "candidate is the head of the edge set".into(),
        ));
    }
    let cut = g.remove_edges(e)?;
    let n = NodeId(g.n());
    let mut new_edges: Vec<(NodeId, NodeId)> = g.tails(e).into_iter().map(|t| (t, n)).collect();
    new_edges.push((n, y));
    let (h, ids) = cut.extend(&["eiv"], &new_edges)?;
    let target: EdgeSet = [*ids.last().unwrap()].into_iter().collect();
    let known: EdgeSet = known.iter().filter(|&k| !e.contains(k)).collect();
    for aux in [false, true] {
        if test_qis(&h, &target, &[w], &[aux], &known, opts)?.is_some() {
            return Ok(true);
        }
    }
    Ok(false)
}

fn weighted(g: &MixedGraph, v: NodeId, subtracted: &[EdgeId]) -> Vec<(CovExpr, NodeId)> {
    let mut terms = vec![(CovExpr::Lit(1.0), v)];
    for &e in subtracted {
        terms.push((
            CovExpr::Lit(-1.0).mul(CovExpr::coef(e)),
            g.edge(e).expect("edge").tail,
        ));
    }
    terms
}

fn build(
    g: &MixedGraph,
    state: &IdentificationState,
    alpha: &[EdgeId],
    y: NodeId,
    t: &QuasiTriple,
    subtracted_y: &[EdgeId],
) -> (CovExpr, CovExpr) {
    let s_terms = weighted(g, t.z, &t.subtracted);
    let mut lhs = CovExpr::zero();
    for &e in alpha {
        let x = g.edge(e).expect("edge").tail;
        let a = bilinear_cov(&s_terms, &[(CovExpr::Lit(1.0), x)], &t.given);
        lhs = lhs.add(a.mul(CovExpr::coef(e)));
    }
    let rhs = bilinear_cov(&s_terms, &weighted(g, y, subtracted_y), &t.given);
    (state.inline(&lhs), state.inline(&rhs))
}

fn random_point(
    g: &MixedGraph,
    state: &IdentificationState,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, Bindings) {
    let n = g.n();
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let sigma = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
    let mut bindings = Bindings::new();
    for (_, s) in state.statuses() {
        if let EdgeStatus::Known(KnownValue::Symbol(name)) = s {
            bindings
                .entry(name.clone())
                .or_insert_with(|| rng.random_range(0.3..1.0));
        }
    }
    (sigma, bindings)
}

/// True when the residual vanishes at generic covariance matrices that obey
/// no model at all, so the constraint says nothing.
fn is_vacuous(g: &MixedGraph, state: &IdentificationState, residual: &CovExpr, seed: u64) -> bool {
    if residual.is_zero() {
        return true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evaluated = 0;
    for _ in 0..6 {
        let (sigma, bindings) = random_point(g, state, &mut rng);
        let r = state.resolver(g, &sigma, &bindings);
        let (Ok(v), Ok(scale)) = (r.eval(residual), r.leaf_scale(residual)) else {
            continue;
        };
        evaluated += 1;
        if v.abs() > 1e-9 * scale.max(1.0) {
            return false;
        }
    }
    evaluated > 0
}

/// Constraints from every joint identification recorded in `state`, plus
/// those where all edges of a connected set are declared known.
pub fn find_constraints(
    g: &MixedGraph,
    state: &IdentificationState,
    opts: &SearchOptions,
) -> Result<ConstraintSet> {
    let available = state.available();
    let mut sources: Vec<(Vec<EdgeId>, Vec<NodeId>)> = state
        .events
        .iter()
        .map(|ev| (ev.edges.clone(), ev.witness.instruments()))
        .collect();
    for cell in g.connected_edge_sets() {
        let declared: Vec<EdgeId> = cell
            .iter()
            .filter(|&e| matches!(state.status(e), Some(EdgeStatus::Known(_))))
            .collect();
        if !declared.is_empty() {
            sources.push((declared, Vec::new()));
        }
    }
    let mut out = ConstraintSet::default();
    let mut seen: BTreeSet<(Vec<EdgeId>, NodeId, Vec<NodeId>, bool)> = BTreeSet::new();
    for (edges, instruments) in sources {
        let alpha: EdgeSet = edges.iter().copied().collect();
        let y = g.edge(edges[0]).expect("edge").head;
        let subtracted_y: Vec<EdgeId> = g
            .incoming(y)
            .iter()
            .copied()
            .filter(|&f| available.contains(f) && !alpha.contains(f))
            .collect();
        for s in g.nodes() {
            if s == y || instruments.contains(&s) {
                continue;
            }
            let triple = match single_instrument(g, &alpha, s, &available, opts) {
                Ok(Some(t)) => t,
                Ok(None) => continue,
                Err(e) if e.is_budget() => {
                    out.undecided
                        .push(format!("{} for {}: {e}", g.name(s), labels(g, &edges)));
                    continue;
                }
                Err(e) => return Err(e),
            };
            match is_eiv(g, s, &alpha, &available, opts) {
                Ok(true) => {}
                Ok(false) => continue,
                Err(e) if e.is_budget() => {
                    out.undecided
                        .push(format!("{} for {}: {e}", g.name(s), labels(g, &edges)));
                    continue;
                }
                Err(e) => return Err(e),
            }
            if !seen.insert((edges.clone(), s, triple.given.clone(), triple.aux)) {
                continue;
            }
            let (lhs, rhs) = build(g, state, &edges, y, &triple, &subtracted_y);
            let residual = lhs.clone().sub(rhs.clone());
            if is_vacuous(g, state, &residual, s.0 as u64) {
                continue;
            }
            out.constraints.push(Constraint {
                lhs,
                rhs,
                witness: ConstraintWitness {
                    edges: edges.clone(),
                    instruments: instruments.clone(),
                    s,
                    given: triple.given,
                    aux: triple.aux,
                    subtracted: triple.subtracted,
                    subtracted_y: subtracted_y.clone(),
                },
            });
        }
    }
    Ok(out)
}

fn labels(g: &MixedGraph, edges: &[EdgeId]) -> String {
    edges
        .iter()
        .map(|&e| g.edge_label(e))
        .collect::<Vec<_>>()
        .join(",")
}

/// Identifies what can be identified, then derives the constraints.
pub fn constraint_finder(
    g: &MixedGraph,
    known: &[(EdgeId, KnownValue)],
    opts: &SearchOptions,
) -> Result<(IdentificationState, ConstraintSet)> {
    let state = qid(g, known, opts)?;
    let set = find_constraints(g, &state, opts)?;
    Ok((state, set))
}

/// `lhs - rhs` at the covariance matrix `sigma`.
pub fn evaluate_constraint(
    g: &MixedGraph,
    c: &Constraint,
    sigma: &DMatrix<f64>,
    state: &IdentificationState,
    bindings: &Bindings,
) -> Result<Residual> {
    let r = state.resolver(g, sigma, bindings);
    let expr = c.residual_expr();
    Ok(Residual {
        value: r.eval(&expr)?,
        scale: r.leaf_scale(&expr)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;
    use crate::oracle::{implied_sigma, sample_params};

    const TWO_IVS: &str = "z1 -> x\nz2 -> x\nx -> y\nx <-> y";

    fn edge(g: &MixedGraph, a: &str, b: &str) -> EdgeId {
        g.find_edge(g.node(a).unwrap(), g.node(b).unwrap()).unwrap()
    }

    fn opts() -> SearchOptions {
        SearchOptions::default()
    }

    #[test]
    fn two_ivs_single_constraint_from_second_instrument() {
        let g = parse_graph(TWO_IVS).unwrap();
        let (state, set) = constraint_finder(&g, &[], &opts()).unwrap();
        assert_eq!(set.constraints.len(), 1, "{:?}", set.constraints);
        let c = &set.constraints[0];
        assert_eq!(c.witness.s, g.node("z2").unwrap());
        assert_eq!(c.witness.instruments, vec![g.node("z1").unwrap()]);
        for seed in 0..20 {
            let s = implied_sigma(&g, &sample_params(&g, seed));
            let r = evaluate_constraint(&g, c, &s.sigma, &state, &Bindings::new()).unwrap();
            assert!(r.relative() < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn overid_conditions_examples() {
        let g = parse_graph(TWO_IVS).unwrap();
        let alpha: EdgeSet = [edge(&g, "x", "y")].into_iter().collect();
        let (z1, z2) = (g.node("z1").unwrap(), g.node("z2").unwrap());
        let none = EdgeSet::new();
        assert_eq!(
            overid_conditions(&g, &alpha, &[z1], z2, &none, &opts()).unwrap(),
            Some((vec![], false))
        );
        assert!(overid_conditions(&g, &alpha, &[z1], z1, &none, &opts()).is_err());
        let g = parse_graph("z -> x\nx -> y\nx <-> y\ny -> c").unwrap();
        let alpha: EdgeSet = [edge(&g, "x", "y")].into_iter().collect();
        let (z, c) = (g.node("z").unwrap(), g.node("c").unwrap());
        assert_eq!(
            overid_conditions(&g, &alpha, &[z], c, &none, &opts()).unwrap(),
            None
        );
    }

    #[test]
    fn eiv_examples() {
        let g = parse_graph(TWO_IVS).unwrap();
        let alpha: EdgeSet = [edge(&g, "x", "y")].into_iter().collect();
        let none = EdgeSet::new();
        assert!(is_eiv(&g, g.node("z2").unwrap(), &alpha, &none, &opts()).unwrap());
        assert!(is_eiv(&g, g.node("z1").unwrap(), &alpha, &none, &opts()).unwrap());
        let g = parse_graph("z -> x\nx -> y\nx <-> y\ny -> c").unwrap();
        let alpha: EdgeSet = [edge(&g, "x", "y")].into_iter().collect();
        assert!(!is_eiv(&g, g.node("c").unwrap(), &alpha, &none, &opts()).unwrap());
    }

    #[test]
    fn saturated_graph_has_no_constraints() {
        let g = parse_graph("a -> b\nb -> c\na -> c").unwrap();
        let (_, set) = constraint_finder(&g, &[], &opts()).unwrap();
        assert!(set.constraints.is_empty(), "{:?}", set.constraints);
    }

    #[test]
    fn known_coefficient_gives_z_overidentifying_constraint() {
        let g = parse_graph("z -> x\nx -> y\nx <-> y").unwrap();
        let alpha = edge(&g, "x", "y");
        let known = vec![(alpha, KnownValue::Symbol("alpha".into()))];
        let (state, set) = constraint_finder(&g, &known, &opts()).unwrap();
        let z = g.node("z").unwrap();
        let c = set
            .constraints
            .iter()
            .find(|c| c.witness.instruments.is_empty() && c.witness.s == z)
            .expect("constraint with no instruments");
        assert_eq!(c.to_sexpr(&g), "(= (mul (cov z x) (coef x->y)) (cov z y))");
        let p = sample_params(&g, 4);
        let s = implied_sigma(&g, &p);
        let mut b = Bindings::new();
        b.insert("alpha".into(), p.coef(alpha));
        assert!(
            evaluate_constraint(&g, c, &s.sigma, &state, &b)
                .unwrap()
                .relative()
                < 1e-12
        );
        b.insert("alpha".into(), p.coef(alpha) + 0.3);
        assert!(
            evaluate_constraint(&g, c, &s.sigma, &state, &b)
                .unwrap()
                .relative()
                > 1e-3
        );
        assert!(matches!(
            evaluate_constraint(&g, c, &s.sigma, &state, &Bindings::new()),
            Err(Error::Unbound(_))
        ));
    }
}
