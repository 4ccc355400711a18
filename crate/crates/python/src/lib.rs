//! Python bindings: graphs, identification, constraints and the numeric oracle.

use std::collections::BTreeMap;

use auxiv::constraints::{constraint_finder, evaluate_constraint, Constraint};
use auxiv::graph::{parse_known, parse_model, EdgeId, EdgeSet, KnownValue, MixedGraph, NodeId};
use auxiv::identify::{qid, verify_identification, Bindings, EdgeStatus, IdentificationState};
use auxiv::instrumental::SearchOptions;
use auxiv::oracle::{implied_sigma, sample_params};
use auxiv::separation::{av_separated, d_separated, nearest_separator};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: auxiv::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn options(max_k: usize, conditioning: bool) -> SearchOptions {
    SearchOptions {
        max_k: max_k.max(1),
        allow_conditioning: conditioning,
        ..SearchOptions::default()
    }
}

/// A mixed graph, with any known coefficients declared in its text.
#[pyclass(module = "auxiv_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Graph {
    graph: MixedGraph,
    known: Vec<(EdgeId, KnownValue)>,
}

impl Graph {
    fn node(&self, name: &str) -> PyResult<NodeId> {
        self.graph.require_node(name).map_err(err)
    }

    fn nodes(&self, names: Option<Vec<String>>) -> PyResult<Vec<NodeId>> {
        names
            .unwrap_or_default()
            .iter()
            .map(|n| self.node(n))
            .collect()
    }

    fn edge(&self, label: &str) -> PyResult<EdgeId> {
        let (t, h) = label
            .split_once("->")
            .ok_or_else(|| PyValueError::new_err(format!("not an edge label: {label}")))?;
        let (t, h) = (self.node(t.trim())?, self.node(h.trim())?);
        self.graph
            .find_edge(t, h)
            .ok_or_else(|| PyValueError::new_err(format!("no edge {label}")))
    }

    fn known_with(&self, extra: Option<&str>) -> PyResult<Vec<(EdgeId, KnownValue)>> {
        let mut known = self.known.clone();
        if let Some(text) = extra {
            for (e, v) in parse_known(text, &self.graph).map_err(err)? {
                if known.iter().any(|(k, _)| *k == e) {
                    return Err(PyValueError::new_err(format!(
                        "{} declared known twice",
                        self.graph.edge_label(e)
                    )));
                }
                known.push((e, v));
            }
        }
        Ok(known)
    }

    fn matrix(&self, rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
        let n = self.graph.n();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err(format!(
                "expected a {n} x {n} matrix in node order"
            )));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

#[pymethods]
impl Graph {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        let model = parse_model(text).map_err(err)?;
        Ok(Graph {
            graph: model.graph,
            known: model.known,
        })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.graph.names().to_vec()
    }

    /// Directed edges as `tail->head` labels, in file order.
    #[getter]
    fn edges(&self) -> Vec<String> {
        self.graph
            .directed_edges()
            .map(|e| self.graph.edge_label(e.id))
            .collect()
    }

    #[getter]
    fn bidirected(&self) -> Vec<(String, String)> {
        self.graph
            .bidirected_edges()
            .iter()
            .map(|&(a, b)| {
                (
                    self.graph.name(a).to_string(),
                    self.graph.name(b).to_string(),
                )
            })
            .collect()
    }

    fn to_text(&self) -> String {
        self.graph.to_text()
    }

    fn connected_edge_sets(&self) -> Vec<Vec<String>> {
        self.graph
            .connected_edge_sets()
            .iter()
            .map(|c| c.iter().map(|e| self.graph.edge_label(e)).collect())
            .collect()
    }

    #[pyo3(signature = (x, y, given=None))]
    fn d_separated(&self, x: &str, y: &str, given: Option<Vec<String>>) -> PyResult<bool> {
        d_separated(
            &self.graph,
            self.node(x)?,
            self.node(y)?,
            &self.nodes(given)?,
        )
        .map_err(err)
    }

    /// Whether `z*`, with the listed incoming edges of `z` subtracted, is
    /// separated from `y` given `given`.
    #[pyo3(signature = (z, subtracted, y, given=None))]
    fn av_separated(
        &self,
        z: &str,
        subtracted: Vec<String>,
        y: &str,
        given: Option<Vec<String>>,
    ) -> PyResult<bool> {
        let edges: EdgeSet = subtracted
            .iter()
            .map(|l| self.edge(l))
            .collect::<PyResult<_>>()?;
        av_separated(
            &self.graph,
            self.node(z)?,
            &edges,
            self.node(y)?,
            &self.nodes(given)?,
        )
        .map_err(err)
    }

    #[pyo3(signature = (y, z, forbid=None))]
    fn nearest_separator(
        &self,
        y: &str,
        z: &str,
        forbid: Option<Vec<String>>,
    ) -> PyResult<Option<Vec<String>>> {
        let w = nearest_separator(
            &self.graph,
            self.node(y)?,
            self.node(z)?,
            &self.nodes(forbid)?,
        );
        Ok(w.map(|w| w.iter().map(|&v| self.graph.name(v).to_string()).collect()))
    }

    /// Implied covariance matrix (node order) of a random parameterization.
    #[pyo3(signature = (seed=0))]
    fn implied_covariance(&self, seed: u64) -> Vec<Vec<f64>> {
        let s = implied_sigma(&self.graph, &sample_params(&self.graph, seed)).sigma;
        s.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph({} nodes, {} directed, {} bidirected)",
            self.graph.n(),
            self.graph.directed_edges().count(),
            self.graph.bidirected_edges().len()
        )
    }
}

/// Result of an identification run.
#[pyclass(module = "auxiv_py", frozen)]
pub struct Identification {
    graph: Graph,
    state: IdentificationState,
}

#[pymethods]
impl Identification {
    /// `unknown`, `undecided`, `known` or `identified`.
    fn status(&self, edge: &str) -> PyResult<&'static str> {
        let e = self.graph.edge(edge)?;
        Ok(match self.state.status(e) {
            Some(EdgeStatus::Unknown) | None => "unknown",
            Some(EdgeStatus::Undecided) => "undecided",
            Some(EdgeStatus::Known(_)) => "known",
            Some(EdgeStatus::Identified { .. }) => "identified",
        })
    }

    fn statuses(&self) -> PyResult<BTreeMap<String, &'static str>> {
        self.graph
            .edges()
            .into_iter()
            .map(|l| Ok((l.clone(), self.status(&l)?)))
            .collect()
    }

    fn identified(&self) -> Vec<String> {
        self.state
            .identified()
            .iter()
            .map(|&e| self.graph.graph.edge_label(e))
            .collect()
    }

    /// Round in which the edge was first identified.
    fn round(&self, edge: &str) -> PyResult<Option<usize>> {
        Ok(self.state.round(self.graph.edge(edge)?))
    }

    /// Formula as an s-expression, with identified coefficients inlined.
    fn formula(&self, edge: &str) -> PyResult<Option<String>> {
        let e = self.graph.edge(edge)?;
        Ok(self
            .state
            .formula(e)
            .map(|f| self.state.inline(f).to_sexpr(&self.graph.graph)))
    }

    /// Value of an identified coefficient at a covariance matrix given in node order.
    #[pyo3(signature = (edge, sigma, bindings=None))]
    fn evaluate(
        &self,
        edge: &str,
        sigma: Vec<Vec<f64>>,
        bindings: Option<Bindings>,
    ) -> PyResult<f64> {
        let e = self.graph.edge(edge)?;
        let sigma = self.graph.matrix(sigma)?;
        let bindings = bindings.unwrap_or_default();
        self.state
            .resolver(&self.graph.graph, &sigma, &bindings)
            .coef(e)
            .map_err(err)
    }

    /// Checks every formula against exact covariance matrices of random
    /// parameterizations; maps each identified edge to whether it passed.
    #[pyo3(signature = (trials=50, tol=1e-6, seed=0))]
    fn verify(&self, trials: usize, tol: f64, seed: u64) -> BTreeMap<String, bool> {
        verify_identification(&self.graph.graph, &self.state, trials, tol, seed)
            .edges
            .iter()
            .map(|c| (self.graph.graph.edge_label(c.edge), c.passed))
            .collect()
    }
}

/// Identifies what the auxiliary instrumental set search can identify.
/// `known` uses the known-values text format.
#[pyfunction]
#[pyo3(signature = (graph, known=None, max_k=4, conditioning=true))]
fn identify(
    graph: &Graph,
    known: Option<&str>,
    max_k: usize,
    conditioning: bool,
) -> PyResult<Identification> {
    let known = graph.known_with(known)?;
    let state = qid(&graph.graph, &known, &options(max_k, conditioning)).map_err(err)?;
    Ok(Identification {
        graph: graph.clone(),
        state,
    })
}

/// An overidentifying constraint `lhs = rhs`.
#[pyclass(module = "auxiv_py", frozen)]
pub struct ConstraintInfo {
    graph: Graph,
    state: std::sync::Arc<IdentificationState>,
    constraint: Constraint,
}

#[pymethods]
impl ConstraintInfo {
    #[getter]
    fn expression(&self) -> String {
        self.constraint.to_sexpr(&self.graph.graph)
    }

    #[getter]
    fn s(&self) -> String {
        self.graph.graph.name(self.constraint.witness.s).to_string()
    }

    #[getter]
    fn edges(&self) -> Vec<String> {
        self.constraint
            .witness
            .edges
            .iter()
            .map(|&e| self.graph.graph.edge_label(e))
            .collect()
    }

    /// Relative residual `|lhs - rhs| / max|leaf|` at a covariance matrix.
    #[pyo3(signature = (sigma, bindings=None))]
    fn residual(&self, sigma: Vec<Vec<f64>>, bindings: Option<Bindings>) -> PyResult<f64> {
        let sigma = self.graph.matrix(sigma)?;
        let r = evaluate_constraint(
            &self.graph.graph,
            &self.constraint,
            &sigma,
            &self.state,
            &bindings.unwrap_or_default(),
        )
        .map_err(err)?;
        Ok(r.relative())
    }

    fn __repr__(&self) -> String {
        self.expression()
    }
}

#[pyfunction]
#[pyo3(signature = (graph, known=None, max_k=4))]
fn constraints(graph: &Graph, known: Option<&str>, max_k: usize) -> PyResult<Vec<ConstraintInfo>> {
    let known = graph.known_with(known)?;
    let (state, set) =
        constraint_finder(&graph.graph, &known, &options(max_k, true)).map_err(err)?;
    let state = std::sync::Arc::new(state);
    Ok(set
        .constraints
        .into_iter()
        .map(|constraint| ConstraintInfo {
            graph: graph.clone(),
            state: state.clone(),
            constraint,
        })
        .collect())
}

#[pymodule]
fn auxiv_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<Identification>()?;
    m.add_class::<ConstraintInfo>()?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(constraints, m)?)?;
    Ok(())
}
