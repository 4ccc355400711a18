//! Symbolic expressions over covariance entries.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::{Add, Div, Mul, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, MixedGraph, NodeId};
use crate::oracle::{max_abs, partial_cov_matrix};

/// Relative size below which a divisor or pivot counts as zero.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// A square system `A e = b`, shared by the expressions for its components.
#[derive(Debug, PartialEq)]
pub struct LinearSystem {
    pub a: Vec<Vec<CovExpr>>,
    pub b: Vec<CovExpr>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CovExpr {
    Lit(f64),
    /// `σ(a, b | given)`; plain covariance when `given` is empty.
    Cov {
        a: NodeId,
        b: NodeId,
        given: Vec<NodeId>,
    },
    /// Coefficient of a directed edge, known or identified elsewhere.
    Coef(EdgeId),
    Add(Arc<CovExpr>, Arc<CovExpr>),
    Sub(Arc<CovExpr>, Arc<CovExpr>),
    Mul(Arc<CovExpr>, Arc<CovExpr>),
    Div(Arc<CovExpr>, Arc<CovExpr>),
    /// Component `index` of the solution of `system`.
    Solve {
        system: Arc<LinearSystem>,
        index: usize,
    },
}

impl CovExpr {
    pub fn zero() -> Self {
        CovExpr::Lit(0.0)
    }

    /// `σ(a, b | given)` with the endpoints put in node order and the
    /// conditioning set sorted. Vanishes when an endpoint is conditioned on.
    pub fn cov(a: NodeId, b: NodeId, given: &[NodeId]) -> Self {
        if given.contains(&a) || given.contains(&b) {
            return CovExpr::zero();
        }
        let mut given = given.to_vec();
        given.sort();
        given.dedup();
        CovExpr::Cov {
            a: a.min(b),
            b: a.max(b),
            given,
        }
    }

    pub fn coef(e: EdgeId) -> Self {
        CovExpr::Coef(e)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, CovExpr::Lit(v) if *v == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, CovExpr::Lit(v) if *v == 1.0)
    }

    /// Solution components of `a e = b`. A 1×1 system becomes a quotient.
    pub fn solve(a: Vec<Vec<CovExpr>>, b: Vec<CovExpr>) -> Vec<CovExpr> {
        let k = b.len();
        assert!(
            a.len() == k && a.iter().all(|row| row.len() == k),
            "system must be square"
        );
        if k == 1 {
            let num = b.into_iter().next().unwrap();
            let den = a.into_iter().next().unwrap().into_iter().next().unwrap();
            return vec![num.div(den)];
        }
        let system = Arc::new(LinearSystem { a, b });
        (0..k)
            .map(|index| CovExpr::Solve {
                system: system.clone(),
                index,
            })
            .collect()
    }

    /// Rebuilds the expression with every coefficient leaf passed through `f`.
    pub fn map_coefs(&self, f: &mut dyn FnMut(EdgeId) -> CovExpr) -> CovExpr {
        let mut memo = HashMap::new();
        self.map_inner(f, &mut memo)
    }

    fn map_inner(
        &self,
        f: &mut dyn FnMut(EdgeId) -> CovExpr,
        memo: &mut HashMap<*const LinearSystem, Arc<LinearSystem>>,
    ) -> CovExpr {
        match self {
            CovExpr::Lit(_) | CovExpr::Cov { .. } => self.clone(),
            CovExpr::Coef(e) => f(*e),
            CovExpr::Add(l, r) => l.map_inner(f, memo).add(r.map_inner(f, memo)),
            CovExpr::Sub(l, r) => l.map_inner(f, memo).sub(r.map_inner(f, memo)),
            CovExpr::Mul(l, r) => l.map_inner(f, memo).mul(r.map_inner(f, memo)),
            CovExpr::Div(l, r) => l.map_inner(f, memo).div(r.map_inner(f, memo)),
            CovExpr::Solve { system, index } => {
                let key = Arc::as_ptr(system);
                let mapped = match memo.get(&key) {
                    Some(s) => s.clone(),
                    None => {
                        let s = Arc::new(LinearSystem {
                            a: system
                                .a
                                .iter()
                                .map(|row| row.iter().map(|x| x.map_inner(f, memo)).collect())
                                .collect(),
                            b: system.b.iter().map(|x| x.map_inner(f, memo)).collect(),
                        });
                        memo.insert(key, s.clone());
                        s
                    }
                };
                CovExpr::Solve {
                    system: mapped,
                    index: *index,
                }
            }
        }
    }

    /// Coefficient leaves, in order of first appearance.
    pub fn coefs(&self) -> Vec<EdgeId> {
        let mut out = Vec::new();
        self.visit(&mut |x| {
            if let CovExpr::Coef(e) = x {
                if !out.contains(e) {
                    out.push(*e);
                }
            }
        });
        out
    }

    fn visit(&self, f: &mut dyn FnMut(&CovExpr)) {
        f(self);
        match self {
            CovExpr::Add(l, r) | CovExpr::Sub(l, r) | CovExpr::Mul(l, r) | CovExpr::Div(l, r) => {
                l.visit(f);
                r.visit(f);
            }
            CovExpr::Solve { system, .. } => {
                for x in system.a.iter().flatten().chain(&system.b) {
                    x.visit(f);
                }
            }
            _ => {}
        }
    }

    /// Largest absolute value among the covariance and coefficient leaves.
    pub fn leaf_scale(
        &self,
        sigma: &DMatrix<f64>,
        coef: &dyn Fn(EdgeId) -> Result<f64>,
    ) -> Result<f64> {
        let mut leaves = Vec::new();
        self.visit(&mut |x| {
            if matches!(x, CovExpr::Cov { .. } | CovExpr::Coef(_)) {
                leaves.push(x.clone());
            }
        });
        let mut scale = 0.0_f64;
        for leaf in leaves {
            scale = scale.max(leaf.eval(sigma, coef)?.abs());
        }
        Ok(scale)
    }

    /// Numeric value at the covariance matrix `sigma`, with coefficient
    /// leaves resolved by `coef`.
    pub fn eval(&self, sigma: &DMatrix<f64>, coef: &dyn Fn(EdgeId) -> Result<f64>) -> Result<f64> {
        let mut ev = Evaluator {
            sigma,
            coef,
            scale: max_abs(sigma).max(f64::MIN_POSITIVE),
            solved: HashMap::new(),
        };
        ev.eval(self)
    }

    pub fn to_sexpr(&self, g: &MixedGraph) -> String {
        let mut s = String::new();
        self.write_sexpr(g, &mut s);
        s
    }

    fn write_sexpr(&self, g: &MixedGraph, out: &mut String) {
        let binary = |op: &str, l: &CovExpr, r: &CovExpr, out: &mut String| {
            write!(out, "({op} ").unwrap();
            l.write_sexpr(g, out);
            out.push(' ');
            r.write_sexpr(g, out);
            out.push(')');
        };
        match self {
            CovExpr::Lit(v) => write!(out, "{v}").unwrap(),
            CovExpr::Cov { a, b, given } if given.is_empty() => {
                write!(out, "(cov {} {})", g.name(*a), g.name(*b)).unwrap()
            }
            CovExpr::Cov { a, b, given } => {
                let names: Vec<&str> = given.iter().map(|&w| g.name(w)).collect();
                write!(
                    out,
                    "(pcov {} {} ({}))",
                    g.name(*a),
                    g.name(*b),
                    names.join(" ")
                )
                .unwrap()
            }
            CovExpr::Coef(e) => write!(out, "(coef {})", g.edge_label(*e)).unwrap(),
            CovExpr::Add(l, r) => binary("add", l, r, out),
            CovExpr::Sub(l, r) => binary("sub", l, r, out),
            CovExpr::Mul(l, r) => binary("mul", l, r, out),
            CovExpr::Div(l, r) => binary("div", l, r, out),
            CovExpr::Solve { system, index } => {
                out.push_str("(solve (");
                for (i, row) in system.a.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    out.push('(');
                    for (j, x) in row.iter().enumerate() {
                        if j > 0 {
                            out.push(' ');
                        }
                        x.write_sexpr(g, out);
                    }
                    out.push(')');
                }
                out.push_str(") (");
                for (i, x) in system.b.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    x.write_sexpr(g, out);
                }
                write!(out, ") {index})").unwrap();
            }
        }
    }
}

impl Add for CovExpr {
    type Output = CovExpr;

    fn add(self, rhs: CovExpr) -> CovExpr {
        match (self, rhs) {
            (CovExpr::Lit(a), CovExpr::Lit(b)) => CovExpr::Lit(a + b),
            (l, r) if l.is_zero() => r,
            (l, r) if r.is_zero() => l,
            (l, r) => CovExpr::Add(Arc::new(l), Arc::new(r)),
        }
    }
}

impl Sub for CovExpr {
    type Output = CovExpr;

    fn sub(self, rhs: CovExpr) -> CovExpr {
        match (self, rhs) {
            (CovExpr::Lit(a), CovExpr::Lit(b)) => CovExpr::Lit(a - b),
            (l, r) if r.is_zero() => l,
            (l, r) if l == r => CovExpr::zero(),
            (l, r) => CovExpr::Sub(Arc::new(l), Arc::new(r)),
        }
    }
}

impl Mul for CovExpr {
    type Output = CovExpr;

    fn mul(self, rhs: CovExpr) -> CovExpr {
        match (self, rhs) {
            (CovExpr::Lit(a), CovExpr::Lit(b)) => CovExpr::Lit(a * b),
            (l, r) if l.is_zero() || r.is_zero() => CovExpr::zero(),
            (l, r) if l.is_one() => r,
            (l, r) if r.is_one() => l,
            (l, r) => CovExpr::Mul(Arc::new(l), Arc::new(r)),
        }
    }
}

impl Div for CovExpr {
    type Output = CovExpr;

    fn div(self, rhs: CovExpr) -> CovExpr {
        match (self, rhs) {
            (l, _) if l.is_zero() => CovExpr::zero(),
            (l, r) if r.is_one() => l,
            (l, r) => CovExpr::Div(Arc::new(l), Arc::new(r)),
        }
    }
}

struct Evaluator<'a> {
    sigma: &'a DMatrix<f64>,
    coef: &'a dyn Fn(EdgeId) -> Result<f64>,
    scale: f64,
    solved: HashMap<*const LinearSystem, DVector<f64>>,
}

impl Evaluator<'_> {
    fn eval(&mut self, x: &CovExpr) -> Result<f64> {
        Ok(match x {
            CovExpr::Lit(v) => *v,
            CovExpr::Cov { a, b, given } => {
                let n = self.sigma.nrows();
                if let Some(bad) = [a, b].into_iter().chain(given).find(|v| v.0 >= n) {
                    return Err(Error::Covariance(format!(
                        "no covariance entry for node {bad}"
                    )));
                }
                let w: Vec<usize> = given.iter().map(|v| v.0).collect();
                partial_cov_matrix(self.sigma, a.0, b.0, &w)?
            }
            CovExpr::Coef(e) => (self.coef)(*e)?,
            CovExpr::Add(l, r) => self.eval(l)? + self.eval(r)?,
            CovExpr::Sub(l, r) => self.eval(l)? - self.eval(r)?,
            CovExpr::Mul(l, r) => self.eval(l)? * self.eval(r)?,
            CovExpr::Div(l, r) => {
                let num = self.eval(l)?;
                let den = self.eval(r)?;
                if den.abs() < DEGENERACY_TOL * self.scale {
                    return Err(Error::Degenerate(format!(
                        "divisor {den:e} is numerically zero"
                    )));
                }
                num / den
            }
            CovExpr::Solve { system, index } => {
                let key = Arc::as_ptr(system);
                if let Some(v) = self.solved.get(&key) {
                    return Ok(v[*index]);
                }
                let k = system.b.len();
                let mut a = DMatrix::zeros(k, k);
                for (i, row) in system.a.iter().enumerate() {
                    for (j, x) in row.iter().enumerate() {
                        a[(i, j)] = self.eval(x)?;
                    }
                }
                let mut b = DVector::zeros(k);
                for (i, x) in system.b.iter().enumerate() {
                    b[i] = self.eval(x)?;
                }
                let lu = a.lu();
                let min_pivot = lu
                    .u()
                    .diagonal()
                    .iter()
                    .fold(f64::INFINITY, |m, v| m.min(v.abs()));
                if min_pivot < DEGENERACY_TOL * self.scale {
                    return Err(Error::Degenerate(format!(
                        "linear system is singular (pivot {min_pivot:e})"
                    )));
                }
                let e = lu
                    .solve(&b)
                    .ok_or_else(|| Error::Degenerate("linear system is singular".into()))?;
                let v = e[*index];
                self.solved.insert(key, e);
                v
            }
        })
    }
}

/// `σ(Σ_i l_i, Σ_j r_j | given)` expanded bilinearly, where each side is a
/// list of `(weight, node)` terms. Terms whose node is conditioned on vanish.
pub fn bilinear_cov(
    left: &[(CovExpr, NodeId)],
    right: &[(CovExpr, NodeId)],
    given: &[NodeId],
) -> CovExpr {
    let mut total = CovExpr::zero();
    for (wl, a) in left {
        for (wr, b) in right {
            let leaf = CovExpr::cov(*a, *b, given);
            if leaf.is_zero() {
                continue;
            }
            total = total.add(wl.clone().mul(wr.clone()).mul(leaf));
        }
    }
    total
}
