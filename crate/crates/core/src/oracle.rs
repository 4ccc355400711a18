//! Exact covariances implied by numeric parameters.
//!
//! Models are `X = Λᵀ X + U` with `Cov(U) = Ω`. Nothing is standardized.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Coefficient, EdgeId, MixedGraph, NodeId};

/// Default cap on enumerated directed paths in [`wright_cov`].
pub const DEFAULT_PATH_CAP: usize = 1_000_000;

/// Structural coefficients by edge slot and the error covariance matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamAssignment {
    pub lambda: Vec<f64>,
    pub omega: DMatrix<f64>,
}

impl ParamAssignment {
    pub fn coef(&self, e: EdgeId) -> f64 {
        self.lambda.get(e.0).copied().unwrap_or(0.0)
    }

    /// Parameters for `aug`, a graph produced by augmenting the graph these
    /// parameters belong to: tagged edges get `1` or minus the referenced
    /// coefficient and the added nodes carry no error of their own.
    pub fn extend_to(&self, aug: &MixedGraph) -> ParamAssignment {
        let mut lambda = self.lambda.clone();
        lambda.resize(aug.edge_slots(), 0.0);
        for e in aug.directed_edges() {
            match e.coefficient {
                Coefficient::Free => {}
                Coefficient::Unit => lambda[e.id.0] = 1.0,
                Coefficient::Negated(src) => lambda[e.id.0] = -self.coef(src),
            }
        }
        let n = self.omega.nrows();
        let mut omega = DMatrix::zeros(aug.n(), aug.n());
        omega.view_mut((0, 0), (n, n)).copy_from(&self.omega);
        ParamAssignment { lambda, omega }
    }

    /// The same parameters with the coefficients of removed edges ignored.
    pub fn restrict_to(&self, g: &MixedGraph) -> ParamAssignment {
        let mut lambda = vec![0.0; g.edge_slots()];
        for e in g.directed_edges() {
            lambda[e.id.0] = self.coef(e.id);
        }
        ParamAssignment {
            lambda,
            omega: self.omega.clone(),
        }
    }

    fn check(&self, g: &MixedGraph) {
        assert_eq!(
            self.omega.nrows(),
            g.n(),
            "parameters do not match the graph"
        );
        assert_eq!(
            self.omega.ncols(),
            g.n(),
            "parameters do not match the graph"
        );
    }
}

/// Implied covariance of the observed variables together with the
/// cross-covariance `Cov(U, X)` of errors and variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpliedCov {
    pub sigma: DMatrix<f64>,
    pub error_cross: DMatrix<f64>,
    pub scale: f64,
}

impl ImpliedCov {
    pub fn get(&self, a: NodeId, b: NodeId) -> f64 {
        self.sigma[(a.0, b.0)]
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `(I - Λᵀ)⁻¹`, built column by column in topological order.
fn total_effects(g: &MixedGraph, p: &ParamAssignment) -> DMatrix<f64> {
    let n = g.n();
    let mut m = DMatrix::<f64>::identity(n, n);
    for &v in g.topological_order() {
        for &e in g.incoming(v) {
            let t = g.edge(e).expect("listed edge").tail;
            let c = p.coef(e);
            for src in 0..n {
                m[(v.0, src)] += c * m[(t.0, src)];
            }
        }
    }
    m
}

pub fn implied_sigma(g: &MixedGraph, p: &ParamAssignment) -> ImpliedCov {
    p.check(g);
    let m = total_effects(g, p);
    let sigma = &m * &p.omega * m.transpose();
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let error_cross = &p.omega * m.transpose();
    let scale = max_abs(&sigma);
    ImpliedCov {
        sigma,
        error_cross,
        scale,
    }
}

/// Directed paths ending at `target`, summed by their source node.
fn path_sums(
    g: &MixedGraph,
    p: &ParamAssignment,
    target: NodeId,
    budget: &mut usize,
    cap: usize,
) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; g.n()];
    let mut stack = vec![(target, 1.0)];
    while let Some((v, product)) = stack.pop() {
        if *budget == 0 {
            return Err(Error::PathCap(cap));
        }
        *budget -= 1;
        sums[v.0] += product;
        for &e in g.incoming(v) {
            let t = g.edge(e).expect("listed edge").tail;
            stack.push((t, product * p.coef(e)));
        }
    }
    Ok(sums)
}

/// Covariance of `x` and `y` as a sum over treks: every pair of directed
/// paths into `x` and `y` whose sources are the same node `k` (weight
/// `ω_kk`) or the two ends of a bidirected edge (weight `ω_ij`).
pub fn wright_cov(
    g: &MixedGraph,
    p: &ParamAssignment,
    x: NodeId,
    y: NodeId,
    cap: usize,
) -> Result<f64> {
    p.check(g);
    let mut budget = cap;
    let into_x = path_sums(g, p, x, &mut budget, cap)?;
    let into_y = path_sums(g, p, y, &mut budget, cap)?;
    let mut total = 0.0;
    for k in 0..g.n() {
        total += into_x[k] * p.omega[(k, k)] * into_y[k];
    }
    for &(a, b) in g.bidirected_edges() {
        let w = p.omega[(a.0, b.0)];
        total += into_x[a.0] * w * into_y[b.0] + into_x[b.0] * w * into_y[a.0];
    }
    Ok(total)
}

fn solve_spd(block: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let scale = max_abs(&block).max(f64::MIN_POSITIVE);
    let chol = Cholesky::new(block).ok_or(Error::SingularConditioning)?;
    let diag_min = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if diag_min * diag_min < 1e-13 * scale {
        return Err(Error::SingularConditioning);
    }
    Ok(chol.solve(&rhs))
}

/// `σ(a,b) - Σ(a,W) Σ(W,W)⁻¹ Σ(W,b)` for an arbitrary covariance matrix.
pub fn partial_cov_matrix(sigma: &DMatrix<f64>, a: usize, b: usize, w: &[usize]) -> Result<f64> {
    cross_partial(sigma, sigma, a, b, w)
}

/// Partial covariance where the left variable's covariances with the
/// observed ones come from `left` (rows) and the rest from `sigma`.
fn cross_partial(
    left: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    a: usize,
    b: usize,
    w: &[usize],
) -> Result<f64> {
    let raw = left[(a, b)];
    if w.is_empty() {
        return Ok(raw);
    }
    let block = DMatrix::from_fn(w.len(), w.len(), |i, j| sigma[(w[i], w[j])]);
    let to_b = DVector::from_fn(w.len(), |i, _| sigma[(w[i], b)]);
    let coef = solve_spd(block, to_b)?;
    let adj: f64 = w
        .iter()
        .zip(coef.iter())
        .map(|(&wi, c)| left[(a, wi)] * c)
        .sum();
    Ok(raw - adj)
}

fn check_partial(n: usize, x: NodeId, y: NodeId, w: &[NodeId]) -> Result<()> {
    if let Some(bad) = w.iter().chain([&x, &y]).find(|v| v.0 >= n) {
        return Err(Error::UnknownNode(format!("{bad}")));
    }
    if w.contains(&x) || w.contains(&y) {
        return Err(Error::Precondition(
            "conditioning set contains an endpoint".into(),
        ));
    }
    Ok(())
}

fn indices(w: &[NodeId]) -> Vec<usize> {
    w.iter().map(|v| v.0).collect()
}

pub fn partial_cov(s: &ImpliedCov, x: NodeId, y: NodeId, w: &[NodeId]) -> Result<f64> {
    check_partial(s.sigma.nrows(), x, y, w)?;
    partial_cov_matrix(&s.sigma, x.0, y.0, &indices(w))
}

/// `σ(u_x, y | W)`: the partial covariance of the error term of `x` with `y`.
pub fn error_partial_cov(
    g: &MixedGraph,
    p: &ParamAssignment,
    x: NodeId,
    y: NodeId,
    w: &[NodeId],
) -> Result<f64> {
    check_partial(g.n(), x, y, w).or_else(|e| match e {
        // u_x is a different variable from x, so x may be conditioned on.
        Error::Precondition(_) if !w.contains(&y) => Ok(()),
        other => Err(other),
    })?;
    let s = implied_sigma(g, p);
    cross_partial(&s.error_cross, &s.sigma, x.0, y.0, &indices(w))
}

/// Coefficients uniform in `±[0.3, 1.0]`; error covariance `D + B Bᵀ` with
/// `D` diagonal in `[1, 2]` and one loading column per bidirected pair.
pub fn sample_params(g: &MixedGraph, seed: u64) -> ParamAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signed = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        let v: f64 = rng.random_range(lo..=hi);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    };
    let mut lambda = vec![0.0; g.edge_slots()];
    for e in g.directed_edges() {
        lambda[e.id.0] = match e.coefficient {
            Coefficient::Free => signed(&mut rng, 0.3, 1.0),
            Coefficient::Unit => 1.0,
            Coefficient::Negated(_) => 0.0,
        };
    }
    for e in g.directed_edges() {
        if let Coefficient::Negated(src) = e.coefficient {
            lambda[e.id.0] = -lambda[src.0];
        }
    }
    let n = g.n();
    let mut omega = DMatrix::zeros(n, n);
    for i in 0..n {
        omega[(i, i)] = rng.random_range(1.0..=2.0);
    }
    for &(a, b) in g.bidirected_edges() {
        let la = signed(&mut rng, 0.2, 0.5);
        let lb = signed(&mut rng, 0.2, 0.5);
        omega[(a.0, a.0)] += la * la;
        omega[(b.0, b.0)] += lb * lb;
        omega[(a.0, b.0)] += la * lb;
        omega[(b.0, a.0)] += la * lb;
    }
    if n > 0 {
        let min_eig = omega.clone().symmetric_eigenvalues().min();
        if min_eig < 0.1 {
            for i in 0..n {
                omega[(i, i)] += 0.1 - min_eig;
            }
        }
    }
    ParamAssignment { lambda, omega }
}

/// `samples` independent Gaussian draws from the model, one row each.
pub fn sample_data(
    g: &MixedGraph,
    p: &ParamAssignment,
    samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    p.check(g);
    let n = g.n();
    let chol = Cholesky::new(p.omega.clone())
        .ok_or_else(|| Error::Covariance("error covariance is not positive definite".into()))?;
    let mixing = total_effects(g, p) * chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = DMatrix::from_fn(n, samples, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok((mixing * noise).transpose())
}

/// Unbiased sample covariance of the rows of `data`.
pub fn sample_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = data.nrows();
    let mean = data.row_mean();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let denom = rows.saturating_sub(1).max(1) as f64;
    centered.transpose() * &centered / denom
}
