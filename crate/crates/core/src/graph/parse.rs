//! Line-oriented graph text format.
//!
//! ```text
//! # comment
//! x -> y            directed edge
//! x <-> y           bidirected edge
//! w                 node declaration
//! known t -> x = 0.4
//! known t -> x      symbolic, bound at evaluation time
//! known t -> x = ?beta
//! ```

use std::collections::BTreeSet;

use super::{EdgeId, GraphBuilder, MixedGraph};
use crate::error::{Error, Result};

/// Value of an externally known coefficient.
#[derive(Clone, Debug, PartialEq)]
pub enum KnownValue {
    Number(f64),
    Symbol(String),
}

/// A graph together with the known-coefficient declarations found in its file.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub graph: MixedGraph,
    pub known: Vec<(EdgeId, KnownValue)>,
}

enum Statement {
    Node(String),
    Directed(String, String),
    Bidirected(String, String),
    Known {
        tail: String,
        head: String,
        value: Option<KnownValue>,
    },
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '.' | '\'' | '*'))
}

fn name(line: usize, s: &str) -> Result<String> {
    let s = s.trim();
    if valid_name(s) {
        Ok(s.to_string())
    } else if s.is_empty() {
        Err(Error::syntax(line, "missing node name"))
    } else {
        Err(Error::syntax(line, format!("invalid node name `{s}`")))
    }
}

fn parse_value(line: usize, s: &str) -> Result<KnownValue> {
    let s = s.trim();
    if let Some(sym) = s.strip_prefix('?') {
        if valid_name(sym) {
            return Ok(KnownValue::Symbol(sym.to_string()));
        }
        return Err(Error::syntax(line, format!("invalid symbol `{s}`")));
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(KnownValue::Number)
        .ok_or_else(|| Error::syntax(line, format!("invalid coefficient value `{s}`")))
}

fn parse_statement(line: usize, text: &str, require_known: bool) -> Result<Option<Statement>> {
    let text = match text.find('#') {
        Some(i) => &text[..i],
        None => text,
    }
    .trim();
    if text.is_empty() {
        return Ok(None);
    }
    let (is_known, body) = match text.strip_prefix("known") {
        Some(rest) if rest.starts_with(char::is_whitespace) => (true, rest.trim()),
        _ => (require_known, text),
    };
    if is_known {
        let (edge, value) = match body.split_once('=') {
            Some((e, v)) => (e, Some(parse_value(line, v)?)),
            None => (body, None),
        };
        let (tail, head) = edge
            .split_once("->")
            .filter(|(t, _)| !t.trim_end().ends_with('<'))
            .ok_or_else(|| Error::syntax(line, "known coefficient must name a directed edge"))?;
        return Ok(Some(Statement::Known {
            tail: name(line, tail)?,
            head: name(line, head)?,
            value,
        }));
    }
    if body.contains('=') {
        return Err(Error::syntax(
            line,
            "unexpected `=` outside a known statement",
        ));
    }
    if let Some((a, b)) = body.split_once("<->") {
        return Ok(Some(Statement::Bidirected(name(line, a)?, name(line, b)?)));
    }
    if let Some((a, b)) = body.split_once("->") {
        return Ok(Some(Statement::Directed(name(line, a)?, name(line, b)?)));
    }
    Ok(Some(Statement::Node(name(line, body)?)))
}

fn resolve_known(
    graph: &MixedGraph,
    pending: Vec<(usize, String, String, Option<KnownValue>)>,
) -> Result<Vec<(EdgeId, KnownValue)>> {
    let mut seen = BTreeSet::new();
    let mut known = Vec::with_capacity(pending.len());
    for (line, tail, head, value) in pending {
        let label = format!("{tail} -> {head}");
        let edge = match (graph.node(&tail), graph.node(&head)) {
            (Some(t), Some(h)) => graph.find_edge(t, h),
            _ => None,
        }
        .ok_or_else(|| Error::MissingEdge(label.clone()))?;
        if !seen.insert(edge) {
            return Err(Error::syntax(
                line,
                format!("coefficient of {label} declared known twice"),
            ));
        }
        let value = value.unwrap_or_else(|| KnownValue::Symbol(format!("{tail}->{head}")));
        known.push((edge, value));
    }
    Ok(known)
}

/// Parses a graph file together with its `known` declarations.
pub fn parse_model(text: &str) -> Result<Model> {
    let mut builder = GraphBuilder::new();
    let mut pending = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let located = |e: Error| match e {
            Error::DuplicateEdge(_) | Error::SelfLoop(_) => Error::syntax(line, e.to_string()),
            other => other,
        };
        match parse_statement(line, raw, false)? {
            None => {}
            Some(Statement::Node(n)) => {
                builder.node(&n);
            }
            Some(Statement::Directed(a, b)) => {
                builder.directed(&a, &b).map_err(located)?;
            }
            Some(Statement::Bidirected(a, b)) => {
                builder.bidirected(&a, &b).map_err(located)?;
            }
            Some(Statement::Known { tail, head, value }) => pending.push((line, tail, head, value)),
        }
    }
    let graph = builder.build()?;
    let known = resolve_known(&graph, pending)?;
    Ok(Model { graph, known })
}

/// Parses a graph file; `known` lines are validated and dropped.
pub fn parse_graph(text: &str) -> Result<MixedGraph> {
    parse_model(text).map(|m| m.graph)
}

/// Parses a known-values file (`a -> b = 0.7`, `a -> b = ?name`; the
/// `known` keyword is optional) against an existing graph.
pub fn parse_known(text: &str, graph: &MixedGraph) -> Result<Vec<(EdgeId, KnownValue)>> {
    let mut pending = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        match parse_statement(line, raw, true)? {
            None => {}
            Some(Statement::Known { tail, head, value }) => pending.push((line, tail, head, value)),
            Some(_) => return Err(Error::syntax(line, "expected a known coefficient")),
        }
    }
    resolve_known(graph, pending)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_statements() {
        let g = parse_graph("x -> y\nz -> x\nx <-> y").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.directed_edges().count(), 2);
        assert_eq!(g.bidirected_edges().len(), 1);
        assert_eq!(g.names(), ["x", "y", "z"]);
    }

    #[test]
    fn two_ivs_shape() {
        let g = parse_graph("z1 -> x\nz2 -> x\nx -> y\nx <-> y").unwrap();
        assert_eq!(
            (
                g.n(),
                g.directed_edges().count(),
                g.bidirected_edges().len()
            ),
            (4, 3, 1)
        );
    }

    #[test]
    fn whitespace_and_comments() {
        let g = parse_graph("  a->b   # trailing\n# full line\n\nb<->   c").unwrap();
        assert_eq!(g.names(), ["a", "b", "c"]);
        assert_eq!(g.edge_label(EdgeId(0)), "a->b");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = parse_graph("a -> b\nc -> \n").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 2, .. }), "{err:?}");
        let err = parse_graph("a -> b\na -> b").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 2, .. }), "{err:?}");
        let err = parse_graph("a <-> b\nb <-> a").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 2, .. }), "{err:?}");
        let err = parse_graph("a -> a").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 1, .. }), "{err:?}");
        let err = parse_graph("a = b").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn known_declarations() {
        let m = parse_model("z -> x\nx -> y\nknown z -> x = 0.25\nknown x -> y\n").unwrap();
        assert_eq!(
            m.known,
            vec![
                (EdgeId(0), KnownValue::Number(0.25)),
                (EdgeId(1), KnownValue::Symbol("x->y".into()))
            ]
        );
        let err = parse_model("a -> b\nknown b -> a = 1").unwrap_err();
        assert_eq!(err, Error::MissingEdge("b -> a".into()));
        let err = parse_model("a -> b\nknown a <-> b").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 2, .. }));
    }

    #[test]
    fn known_file() {
        let g = parse_graph("a -> b\nb -> c").unwrap();
        let k = parse_known("a -> b = ?gamma\nknown b -> c = -1.5", &g).unwrap();
        assert_eq!(
            k,
            vec![
                (EdgeId(0), KnownValue::Symbol("gamma".into())),
                (EdgeId(1), KnownValue::Number(-1.5))
            ]
        );
        assert!(parse_known("a -> b = 1\na -> b = 2", &g).is_err());
        assert!(parse_known("a <-> b", &g).is_err());
    }
}
