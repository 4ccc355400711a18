//! Command-line front end. Every command writes one deterministic report,
//! JSON except for `simulate`, which writes CSV.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::constraints::{evaluate_constraint, find_constraints, Constraint};
use crate::error::{Error, Result};
use crate::graph::{parse_known, parse_model, EdgeId, KnownValue, MixedGraph, NodeId};
use crate::identify::{
    apply_verification, qid, trial_params, verify_identification, Bindings, EdgeStatus,
};
use crate::instrumental::{
    QisWitness, QuasiTriple, SearchOptions, SeparatorStrategy, Step, TrekPath,
};
use crate::oracle::{implied_sigma, sample_covariance, sample_data};
use crate::separation::{d_separated, nearest_separator};

pub const SCHEMA: u32 = 1;

#[derive(Parser, Debug, Clone)]
#[command(
    name = "auxiv",
    version,
    about = "Coefficient identification and overidentifying constraints for linear SEMs"
)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Decide which coefficients are identified and print their formulas.
    Identify(IdentifyArgs),
    /// Like `identify`, with a known-values file required.
    Zid(ZidArgs),
    /// List overidentifying constraints.
    Constraints(ConstraintsArgs),
    /// Evaluate the constraints at a covariance matrix.
    Check(CheckArgs),
    /// Print the implied covariance matrix (or samples) of a random parameterization.
    Simulate(SimulateArgs),
    /// Test d-separation and report a nearest separator.
    CheckSep(CheckSepArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    /// Largest edge set searched jointly.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_k: u64,
    /// Cap on enumerated paths per search.
    #[arg(long, default_value_t = 10_000)]
    pub path_cap: usize,
    /// Only unconditioned instruments.
    #[arg(long)]
    pub no_conditioning: bool,
}

impl SearchArgs {
    fn options(&self) -> SearchOptions {
        SearchOptions {
            max_k: self.max_k as usize,
            path_cap: self.path_cap,
            separator: SeparatorStrategy::Nearest,
            allow_conditioning: !self.no_conditioning,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct IdentifyArgs {
    pub graph: PathBuf,
    #[arg(long)]
    pub known: Option<PathBuf>,
    /// Verify identified formulas on this many random models.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub verify: Option<u64>,
    /// Relative tolerance for verification.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ZidArgs {
    pub graph: PathBuf,
    #[arg(long)]
    pub known: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub verify: Option<u64>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ConstraintsArgs {
    pub graph: PathBuf,
    #[arg(long)]
    pub known: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CheckArgs {
    pub graph: PathBuf,
    /// CSV covariance matrix with a header row of node names.
    pub sigma: PathBuf,
    #[arg(long)]
    pub known: Option<PathBuf>,
    /// Value of a symbolic known coefficient, as `name=value`.
    #[arg(long = "bind", value_name = "NAME=VALUE")]
    pub bindings: Vec<String>,
    /// Largest relative residual that passes.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    pub graph: PathBuf,
    #[arg(long)]
    pub known: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Emit this many draws instead of the exact matrix.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub samples: Option<u64>,
    /// With `--samples`, emit their covariance matrix.
    #[arg(long, requires = "samples")]
    pub sample_cov: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CheckSepArgs {
    pub graph: PathBuf,
    pub x: String,
    pub y: String,
    /// Conditioning nodes.
    #[arg(long, value_delimiter = ',')]
    pub given: Vec<String>,
    /// Nodes the reported separator must avoid.
    #[arg(long, value_delimiter = ',')]
    pub forbid: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A finished command: the report text and the exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: String,
    pub status: i32,
}

impl RunConfig {
    fn out(&self) -> Option<&Path> {
        match &self.command {
            Command::Identify(a) => a.out.as_deref(),
            Command::Zid(a) => a.out.as_deref(),
            Command::Constraints(a) => a.out.as_deref(),
            Command::Check(a) => a.out.as_deref(),
            Command::Simulate(a) => a.out.as_deref(),
            Command::CheckSep(a) => a.out.as_deref(),
        }
    }
}

/// Parses arguments, runs the command and writes its report; returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match execute(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let written = match cfg.out() {
        Some(path) => {
            fs::write(path, &outcome.report).map_err(|e| format!("{}: {e}", path.display()))
        }
        None => std::io::stdout()
            .write_all(outcome.report.as_bytes())
            .map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return 1;
    }
    outcome.status
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    let report = match &cfg.command {
        Command::Identify(a) => identify(
            &a.graph,
            a.known.as_deref(),
            a.verify,
            a.tol,
            a.seed,
            &a.search,
        )?,
        Command::Zid(a) => identify(&a.graph, Some(&a.known), a.verify, a.tol, a.seed, &a.search)?,
        Command::Constraints(a) => constraints(a)?,
        Command::Check(a) => return check(a),
        Command::Simulate(a) => simulate(a)?,
        Command::CheckSep(a) => check_sep(a)?,
    };
    Ok(Outcome { report, status: 0 })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// The graph file's own `known` lines plus those of the known-values file.
fn load(graph: &Path, known: Option<&Path>) -> Result<(MixedGraph, Vec<(EdgeId, KnownValue)>)> {
    let model = parse_model(&read(graph)?)?;
    let mut declared = model.known;
    if let Some(path) = known {
        for (e, v) in parse_known(&read(path)?, &model.graph)? {
            if declared.iter().any(|(d, _)| *d == e) {
                return Err(Error::Precondition(format!(
                    "{} is declared known twice",
                    model.graph.edge_label(e)
                )));
            }
            declared.push((e, v));
        }
    }
    Ok((model.graph, declared))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn names(g: &MixedGraph, vs: &[NodeId]) -> Vec<String> {
    vs.iter().map(|&v| g.name(v).to_string()).collect()
}

fn labels(g: &MixedGraph, es: &[EdgeId]) -> Vec<String> {
    es.iter().map(|&e| g.edge_label(e)).collect()
}

fn path_text(g: &MixedGraph, p: &TrekPath) -> String {
    let mut s = g.name(p.nodes[0]).to_string();
    for (step, v) in p.steps.iter().zip(&p.nodes[1..]) {
        s.push_str(match step {
            Step::Up(_) => " <- ",
            Step::Down(_) => " -> ",
            Step::Bidirected => " <-> ",
        });
        s.push_str(g.name(*v));
    }
    s
}

#[derive(Serialize)]
#[serde(untagged)]
enum ValueJson {
    Number(f64),
    Symbol(String),
}

fn value_json(v: &KnownValue) -> ValueJson {
    match v {
        KnownValue::Number(x) => ValueJson::Number(*x),
        KnownValue::Symbol(s) => ValueJson::Symbol(format!("?{s}")),
    }
}

#[derive(Serialize)]
struct EdgeJson {
    edge: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<ValueJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    round: Option<usize>,
    /// In terms of covariances and earlier coefficients.
    #[serde(skip_serializing_if = "Option::is_none")]
    formula: Option<String>,
    /// With the earlier identified coefficients substituted.
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<String>,
}

#[derive(Serialize)]
struct InstrumentJson {
    node: String,
    aux: bool,
    subtracted: Vec<String>,
    given: Vec<String>,
    target: String,
    path: String,
}

fn instrument_json(g: &MixedGraph, t: &QuasiTriple) -> InstrumentJson {
    InstrumentJson {
        node: g.name(t.z).to_string(),
        aux: t.aux,
        subtracted: labels(g, &t.subtracted),
        given: names(g, &t.given),
        target: g.edge_label(t.target),
        path: path_text(g, &t.path),
    }
}

#[derive(Serialize)]
struct EventJson {
    round: usize,
    edges: Vec<String>,
    new: Vec<String>,
    outcome: String,
    subtracted: Vec<String>,
    instruments: Vec<InstrumentJson>,
}

fn event_json(g: &MixedGraph, round: usize, new: &[EdgeId], w: &QisWitness) -> EventJson {
    EventJson {
        round,
        edges: labels(g, &w.edges),
        new: labels(g, new),
        outcome: g.name(w.y).to_string(),
        subtracted: labels(g, &w.subtracted_y),
        instruments: w.triples.iter().map(|t| instrument_json(g, t)).collect(),
    }
}

#[derive(Serialize)]
struct DiagnosticJson {
    edge: String,
    message: String,
}

#[derive(Serialize)]
struct CheckJson {
    edge: String,
    failures: usize,
    degenerate: usize,
    max_rel_error: f64,
    passed: bool,
}

#[derive(Serialize)]
struct VerificationJson {
    trials: usize,
    tol: f64,
    seed: u64,
    edges: Vec<CheckJson>,
}

#[derive(Serialize)]
struct IdentifyReport {
    schema: u32,
    command: &'static str,
    nodes: Vec<String>,
    edges: Vec<EdgeJson>,
    events: Vec<EventJson>,
    diagnostics: Vec<DiagnosticJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<VerificationJson>,
}

fn identify(
    graph: &Path,
    known: Option<&Path>,
    verify: Option<u64>,
    tol: f64,
    seed: u64,
    search: &SearchArgs,
) -> Result<String> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Precondition("tolerance must be positive".into()));
    }
    let (g, declared) = load(graph, known)?;
    let mut state = qid(&g, &declared, &search.options())?;
    let verification = verify.map(|trials| {
        let report = verify_identification(&g, &state, trials as usize, tol, seed);
        apply_verification(&g, &mut state, &report);
        VerificationJson {
            trials: report.trials,
            tol: report.tol,
            seed,
            edges: report
                .edges
                .iter()
                .map(|c| CheckJson {
                    edge: g.edge_label(c.edge),
                    failures: c.failures,
                    degenerate: c.degenerate,
                    max_rel_error: c.max_rel_error,
                    passed: c.passed,
                })
                .collect(),
        }
    });
    let edges = state
        .statuses()
        .map(|(e, s)| {
            let mut j = EdgeJson {
                edge: g.edge_label(e),
                status: "unknown",
                value: None,
                round: None,
                formula: None,
                closed_form: None,
            };
            match s {
                EdgeStatus::Unknown => {}
                EdgeStatus::Undecided => j.status = "undecided",
                EdgeStatus::Known(v) => {
                    j.status = "known";
                    j.value = Some(value_json(v));
                }
                EdgeStatus::Identified { formula, round } => {
                    j.status = "identified";
                    j.round = Some(*round);
                    j.formula = Some(formula.to_sexpr(&g));
                    j.closed_form = Some(state.inline(formula).to_sexpr(&g));
                }
            }
            j
        })
        .collect();
    let report = IdentifyReport {
        schema: SCHEMA,
        command: "identify",
        nodes: g.names().to_vec(),
        edges,
        events: state
            .events
            .iter()
            .map(|ev| event_json(&g, ev.round, &ev.new, &ev.witness))
            .collect(),
        diagnostics: state
            .diagnostics
            .iter()
            .map(|(e, m)| DiagnosticJson {
                edge: g.edge_label(*e),
                message: m.clone(),
            })
            .collect(),
        verification,
    };
    Ok(to_json(&report))
}

#[derive(Serialize)]
struct WitnessJson {
    edges: Vec<String>,
    instruments: Vec<String>,
    s: String,
    aux: bool,
    subtracted: Vec<String>,
    given: Vec<String>,
    subtracted_y: Vec<String>,
}

#[derive(Serialize)]
struct ConstraintJson {
    constraint: String,
    witness: WitnessJson,
}

fn constraint_json(g: &MixedGraph, c: &Constraint) -> ConstraintJson {
    let w = &c.witness;
    ConstraintJson {
        constraint: c.to_sexpr(g),
        witness: WitnessJson {
            edges: labels(g, &w.edges),
            instruments: names(g, &w.instruments),
            s: g.name(w.s).to_string(),
            aux: w.aux,
            subtracted: labels(g, &w.subtracted),
            given: names(g, &w.given),
            subtracted_y: labels(g, &w.subtracted_y),
        },
    }
}

#[derive(Serialize)]
struct ConstraintsReport {
    schema: u32,
    command: &'static str,
    constraints: Vec<ConstraintJson>,
    undecided: Vec<String>,
}

fn constraints(a: &ConstraintsArgs) -> Result<String> {
    let (g, declared) = load(&a.graph, a.known.as_deref())?;
    let opts = a.search.options();
    let state = qid(&g, &declared, &opts)?;
    let set = find_constraints(&g, &state, &opts)?;
    Ok(to_json(&ConstraintsReport {
        schema: SCHEMA,
        command: "constraints",
        constraints: set
            .constraints
            .iter()
            .map(|c| constraint_json(&g, c))
            .collect(),
        undecided: set.undecided,
    }))
}

/// Reads a covariance CSV and reorders it to the graph's node order.
pub fn read_sigma(g: &MixedGraph, text: &str) -> Result<DMatrix<f64>> {
    let bad = |m: String| Error::Covariance(m);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let row: Vec<f64> = record
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| bad(format!("not a number: {c:?}")))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    let m = header.len();
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(bad(format!("expected a {m} x {m} matrix")));
    }
    let mut index = Vec::with_capacity(g.n());
    for name in g.names() {
        match header.iter().position(|h| h == name) {
            Some(i) => index.push(i),
            None => return Err(bad(format!("no column for node {name}"))),
        }
    }
    if let Some(extra) = header.iter().find(|h| g.node(h).is_none()) {
        return Err(bad(format!("column {extra} is not a node")));
    }
    let scale = rows.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..m {
        for j in 0..i {
            if (rows[i][j] - rows[j][i]).abs() > 1e-9 * scale {
                return Err(bad(format!(
                    "not symmetric at {}, {}",
                    header[i], header[j]
                )));
            }
        }
    }
    Ok(DMatrix::from_fn(g.n(), g.n(), |i, j| {
        rows[index[i]][index[j]]
    }))
}

fn parse_bindings(raw: &[String]) -> Result<Bindings> {
    let mut b = Bindings::new();
    for item in raw {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Precondition(format!("binding {item:?} is not NAME=VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Precondition(format!("binding {item:?} has no numeric value")))?;
        b.insert(name.trim().trim_start_matches('?').to_string(), value);
    }
    Ok(b)
}

#[derive(Serialize)]
struct ResidualJson {
    constraint: String,
    s: String,
    edges: Vec<String>,
    residual: f64,
    scale: f64,
    relative: f64,
    passed: bool,
}

#[derive(Serialize)]
struct CheckReport {
    schema: u32,
    command: &'static str,
    tol: f64,
    residuals: Vec<ResidualJson>,
    violated: usize,
}

fn check(a: &CheckArgs) -> Result<Outcome> {
    if a.tol.is_nan() || a.tol <= 0.0 {
        return Err(Error::Precondition("tolerance must be positive".into()));
    }
    let (g, declared) = load(&a.graph, a.known.as_deref())?;
    let sigma = read_sigma(&g, &read(&a.sigma)?)?;
    let bindings = parse_bindings(&a.bindings)?;
    let opts = a.search.options();
    let state = qid(&g, &declared, &opts)?;
    let set = find_constraints(&g, &state, &opts)?;
    let mut residuals = Vec::new();
    for c in &set.constraints {
        let r = evaluate_constraint(&g, c, &sigma, &state, &bindings)?;
        residuals.push(ResidualJson {
            constraint: c.to_sexpr(&g),
            s: g.name(c.witness.s).to_string(),
            edges: labels(&g, &c.witness.edges),
            residual: r.value,
            scale: r.scale,
            relative: r.relative(),
            passed: r.relative() <= a.tol,
        });
    }
    let violated = residuals.iter().filter(|r| !r.passed).count();
    Ok(Outcome {
        report: to_json(&CheckReport {
            schema: SCHEMA,
            command: "check",
            tol: a.tol,
            residuals,
            violated,
        }),
        status: if violated > 0 { 2 } else { 0 },
    })
}

fn write_csv(header: &[String], m: &DMatrix<f64>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string()))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

fn simulate(a: &SimulateArgs) -> Result<String> {
    let (g, declared) = load(&a.graph, a.known.as_deref())?;
    let state = crate::identify::IdentificationState::new(&g, &declared)?;
    let (p, _) = trial_params(&g, &state, a.seed);
    let m = match a.samples {
        None => implied_sigma(&g, &p).sigma,
        Some(n) => {
            let data = sample_data(&g, &p, n as usize, a.seed)?;
            if a.sample_cov {
                sample_covariance(&data)
            } else {
                data
            }
        }
    };
    Ok(write_csv(g.names(), &m))
}

#[derive(Serialize)]
struct SepReport {
    schema: u32,
    command: &'static str,
    x: String,
    y: String,
    given: Vec<String>,
    separated: bool,
    nearest_separator: Option<Vec<String>>,
}

fn check_sep(a: &CheckSepArgs) -> Result<String> {
    let g = parse_model(&read(&a.graph)?)?.graph;
    let x = g.require_node(&a.x)?;
    let y = g.require_node(&a.y)?;
    let given: Vec<NodeId> = a
        .given
        .iter()
        .map(|n| g.require_node(n))
        .collect::<Result<_>>()?;
    let forbid: Vec<NodeId> = a
        .forbid
        .iter()
        .map(|n| g.require_node(n))
        .collect::<Result<_>>()?;
    let separated = d_separated(&g, x, y, &given)?;
    let nearest = nearest_separator(&g, y, x, &forbid).map(|w| names(&g, &w));
    Ok(to_json(&SepReport {
        schema: SCHEMA,
        command: "check-sep",
        x: a.x.clone(),
        y: a.y.clone(),
        given: names(&g, &given),
        separated,
        nearest_separator: nearest,
    }))
}
