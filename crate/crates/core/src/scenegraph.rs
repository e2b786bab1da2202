//! Scene graphs: the textual world view handed to the brain.
//!
//! Nodes are serialized with two decimals. That precision is part of the
//! wire format (prompts embed it verbatim) while the in-memory graph keeps
//! full precision.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::category::{self, DEFAULT_STATE};
use crate::world::{Aabb, Observation, Vec3};

/// Vertical gap allowed between a supported object and its support.
pub const ON_TOP_GAP: f64 = 0.01;
pub const INSIDE_FRACTION: f64 = 0.9;
/// Centroid distance below which two otherwise unrelated objects are near.
pub const NEAR_DISTANCE: f64 = 0.08;
/// Position change reported as a move by [`diff_graphs`].
pub const MOVE_THRESHOLD: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "on top of")]
    OnTopOf,
    #[serde(rename = "inside")]
    Inside,
    #[serde(rename = "near")]
    Near,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::OnTopOf => "on top of",
            Relation::Inside => "inside",
            Relation::Near => "near",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "on top of" => Some(Relation::OnTopOf),
            "inside" => Some(Relation::Inside),
            "near" => Some(Relation::Near),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub label: String,
    pub state: Option<String>,
    pub position: [f64; 3],
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
}

impl Node {
    pub fn aabb(&self) -> Aabb {
        Aabb {
            min: Vec3::new(self.x_range[0], self.y_range[0], self.z_range[0]),
            max: Vec3::new(self.x_range[1], self.y_range[1], self.z_range[1]),
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    pub fn category(&self) -> &str {
        category::category_of_label(&self.label)
    }

    pub fn state_or_default(&self) -> &str {
        self.state.as_deref().unwrap_or(DEFAULT_STATE)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// Which node fields are serialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NodeFormat {
    #[default]
    Full,
    /// Drop the three ranges.
    NoBbox,
    /// Drop the ranges and the position.
    NoBboxNoPosition,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("duplicate node label {0:?}")]
    DuplicateLabel(String),
    #[error("line {line}: malformed node: {reason}")]
    MalformedNode { line: usize, reason: String },
    #[error("line {line}: malformed edge: {reason}")]
    MalformedEdge { line: usize, reason: String },
    #[error("line {line}: unknown relation {relation:?}")]
    UnknownRelation { line: usize, relation: String },
    #[error("missing {0} section")]
    MissingSection(&'static str),
}

pub fn build_scene_graph(obs: &Observation) -> Result<SceneGraph, GraphError> {
    let mut seen = HashSet::new();
    let mut nodes = Vec::with_capacity(obs.objects.len());
    for r in &obs.objects {
        let label = r.label();
        if !seen.insert(label.clone()) {
            return Err(GraphError::DuplicateLabel(label));
        }
        nodes.push(Node {
            label,
            state: (r.state != DEFAULT_STATE).then(|| r.state.clone()),
            position: r.position,
            x_range: r.x_range,
            y_range: r.y_range,
            z_range: r.z_range,
        });
    }
    let edges = infer_relations(&nodes);
    Ok(SceneGraph { nodes, edges })
}

pub fn is_inside(a: &Node, b: &Node) -> bool {
    category::kind(b.category()).is_container()
        && a.aabb().contained_fraction(&b.aabb()) >= INSIDE_FRACTION
}

pub fn is_on_top(a: &Node, b: &Node) -> bool {
    a.aabb().rests_on(&b.aabb(), ON_TOP_GAP)
}

pub fn centroid_distance(a: &Node, b: &Node) -> f64 {
    (a.position() - b.position()).norm()
}

/// At most one edge per pair. Containment wins over support, support over
/// proximity.
pub fn infer_relations(nodes: &[Node]) -> Vec<Edge> {
    let edge = |s: &Node, r, o: &Node| Edge {
        subject: s.label.clone(),
        relation: r,
        object: o.label.clone(),
    };
    let mut edges = Vec::new();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            let e = if is_inside(a, b) {
                edge(a, Relation::Inside, b)
            } else if is_inside(b, a) {
                edge(b, Relation::Inside, a)
            } else if is_on_top(a, b) {
                edge(a, Relation::OnTopOf, b)
            } else if is_on_top(b, a) {
                edge(b, Relation::OnTopOf, a)
            } else if centroid_distance(a, b) <= NEAR_DISTANCE {
                edge(a, Relation::Near, b)
            } else {
                continue;
            };
            edges.push(e);
        }
    }
    edges
}

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

fn range(r: &[f64; 2]) -> String {
    format!("[{}, {}]", f2(r[0]), f2(r[1]))
}

pub fn node_line(n: &Node, format: NodeFormat) -> String {
    let mut s = format!("    - {}", n.label);
    if let Some(state) = &n.state {
        let _ = write!(s, " ({state})");
    }
    if format == NodeFormat::NoBboxNoPosition {
        return s;
    }
    let p = &n.position;
    let _ = write!(s, " -- position: [{}, {}, {}]", f2(p[0]), f2(p[1]), f2(p[2]));
    if format == NodeFormat::Full {
        let _ = write!(
            s,
            ", x_range: {}, y_range: {}, z_range: {}",
            range(&n.x_range),
            range(&n.y_range),
            range(&n.z_range)
        );
    }
    s
}

pub fn serialize_graph(g: &SceneGraph) -> String {
    serialize_graph_with(g, NodeFormat::Full)
}

pub fn serialize_graph_with(g: &SceneGraph, format: NodeFormat) -> String {
    let mut out = String::from("  [Nodes]:\n");
    for n in &g.nodes {
        out.push_str(&node_line(n, format));
        out.push('\n');
    }
    out.push_str("  [Edges]:\n");
    for e in &g.edges {
        let _ = writeln!(out, "    - {} -> {} -> {}", e.subject, e.relation.as_str(), e.object);
    }
    out
}

fn parse_vec<const N: usize>(s: &str) -> Option<[f64; N]> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    let parts: Vec<&str> = inner.split(',').collect();
    if parts.len() != N {
        return None;
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().ok()?;
        if !o.is_finite() {
            return None;
        }
    }
    Some(out)
}

/// Splits "label (state)" into its parts.
fn split_label(head: &str) -> Option<(String, Option<String>)> {
    let head = head.trim();
    if let Some(open) = head.rfind(" (") {
        let state = head[open + 2..].strip_suffix(')')?;
        let label = head[..open].trim();
        if label.is_empty() || state.is_empty() {
            return None;
        }
        return Some((label.to_string(), Some(state.to_string())));
    }
    if head.is_empty() || head.contains(['(', ')']) {
        return None;
    }
    Some((head.to_string(), None))
}

fn parse_node(body: &str) -> Result<Node, String> {
    let (head, rest) = body
        .split_once(" -- ")
        .ok_or_else(|| "expected ' -- ' after the label".to_string())?;
    let (label, state) = split_label(head).ok_or_else(|| format!("bad label {head:?}"))?;
    let rest = rest.trim();
    let mut fields = [None::<&str>; 4];
    let keys = ["position: ", "x_range: ", "y_range: ", "z_range: "];
    // Fields are "key: [..]" separated by ", " outside brackets.
    let mut cursor = rest;
    for (k, key) in keys.iter().enumerate() {
        cursor = cursor
            .strip_prefix(key)
            .ok_or_else(|| format!("expected {:?}", key.trim_end()))?;
        let close = cursor.find(']').ok_or("unterminated vector")?;
        fields[k] = Some(&cursor[..=close]);
        cursor = cursor[close + 1..].trim_start();
        if k < 3 {
            cursor = cursor
                .strip_prefix(',')
                .ok_or("expected ',' between fields")?
                .trim_start();
        }
    }
    if !cursor.is_empty() {
        return Err(format!("trailing text {cursor:?}"));
    }
    let position = parse_vec::<3>(fields[0].unwrap()).ok_or("bad position")?;
    let x_range = parse_vec::<2>(fields[1].unwrap()).ok_or("bad x_range")?;
    let y_range = parse_vec::<2>(fields[2].unwrap()).ok_or("bad y_range")?;
    let z_range = parse_vec::<2>(fields[3].unwrap()).ok_or("bad z_range")?;
    Ok(Node {
        label,
        state,
        position,
        x_range,
        y_range,
        z_range,
    })
}

/// Parses the serialized grammar. Whitespace around lines is ignored and
/// the "- " bullet on edge lines is optional.
pub fn parse_graph(text: &str) -> Result<SceneGraph, GraphError> {
    #[derive(PartialEq)]
    enum Section {
        Before,
        Nodes,
        Edges,
    }
    let mut section = Section::Before;
    let mut g = SceneGraph::default();
    let mut labels = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "[Nodes]:" if section == Section::Before => {
                section = Section::Nodes;
                continue;
            }
            "[Edges]:" if section == Section::Nodes => {
                section = Section::Edges;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Before => return Err(GraphError::MissingSection("[Nodes]")),
            Section::Nodes => {
                let malformed = |reason: String| GraphError::MalformedNode {
                    line: line_no,
                    reason,
                };
                let body = line
                    .strip_prefix("- ")
                    .ok_or_else(|| malformed("expected '- '".into()))?;
                let node = parse_node(body).map_err(malformed)?;
                if !labels.insert(node.label.clone()) {
                    return Err(GraphError::DuplicateLabel(node.label));
                }
                g.nodes.push(node);
            }
            Section::Edges => {
                let body = line.strip_prefix("- ").unwrap_or(line);
                let malformed = |reason: String| GraphError::MalformedEdge {
                    line: line_no,
                    reason,
                };
                let parts: Vec<&str> = body.split(" -> ").map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(malformed("expected 'subject -> relation -> object'".into()));
                }
                let relation = Relation::parse(parts[1]).ok_or_else(|| GraphError::UnknownRelation {
                    line: line_no,
                    relation: parts[1].to_string(),
                })?;
                for end in [parts[0], parts[2]] {
                    if !labels.contains(end) {
                        return Err(malformed(format!("unknown node {end:?}")));
                    }
                }
                if parts[0] == parts[2] {
                    return Err(malformed("self edge".into()));
                }
                g.edges.push(Edge {
                    subject: parts[0].to_string(),
                    relation,
                    object: parts[2].to_string(),
                });
            }
        }
    }
    match section {
        Section::Before => Err(GraphError::MissingSection("[Nodes]")),
        Section::Nodes => Err(GraphError::MissingSection("[Edges]")),
        Section::Edges => Ok(g),
    }
}

/// Node labels from a serialized graph of any node format, skipping lines
/// that do not look like nodes.
pub fn node_labels(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut in_nodes = false;
    for line in text.lines().map(str::trim) {
        match line {
            "[Nodes]:" => in_nodes = true,
            "[Edges]:" => in_nodes = false,
            _ if in_nodes => {
                if let Some(body) = line.strip_prefix("- ") {
                    let head = body.split(" -- ").next().unwrap_or(body);
                    if let Some((label, _)) = split_label(head) {
                        out.push(label);
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn q(v: f64) -> f64 {
    f2(v).parse().unwrap()
}

impl SceneGraph {
    /// The graph as it reads back after a serialize/parse round trip.
    pub fn quantized(&self) -> SceneGraph {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node {
                label: n.label.clone(),
                state: n.state.clone(),
                position: n.position.map(q),
                x_range: n.x_range.map(q),
                y_range: n.y_range.map(q),
                z_range: n.z_range.map(q),
            })
            .collect();
        SceneGraph {
            nodes,
            edges: self.edges.clone(),
        }
    }

    pub fn node(&self, label: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.label == label)
    }

    pub fn has_edge(&self, subject: &str, relation: Relation, object: &str) -> bool {
        self.edges
            .iter()
            .any(|e| e.subject == subject && e.relation == relation && e.object == object)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moved {
    pub label: String,
    pub from: [f64; 3],
    pub to: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub label: String,
    pub from: String,
    pub to: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub moved: Vec<Moved>,
    pub state_changed: Vec<StateChange>,
    pub edges_added: Vec<Edge>,
    pub edges_removed: Vec<Edge>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.moved.is_empty()
            && self.state_changed.is_empty()
            && self.edges_added.is_empty()
            && self.edges_removed.is_empty()
    }
}

pub const ABSENT: &str = "absent";

pub fn diff_graphs(before: &SceneGraph, after: &SceneGraph) -> GraphDelta {
    let mut d = GraphDelta::default();
    for a in &before.nodes {
        match after.node(&a.label) {
            Some(b) => {
                if (a.position() - b.position()).norm() > MOVE_THRESHOLD {
                    d.moved.push(Moved {
                        label: a.label.clone(),
                        from: a.position,
                        to: b.position,
                    });
                }
                if a.state_or_default() != b.state_or_default() {
                    d.state_changed.push(StateChange {
                        label: a.label.clone(),
                        from: a.state_or_default().to_string(),
                        to: b.state_or_default().to_string(),
                    });
                }
            }
            None => d.state_changed.push(StateChange {
                label: a.label.clone(),
                from: a.state_or_default().to_string(),
                to: ABSENT.to_string(),
            }),
        }
    }
    for b in &after.nodes {
        if before.node(&b.label).is_none() {
            d.state_changed.push(StateChange {
                label: b.label.clone(),
                from: ABSENT.to_string(),
                to: b.state_or_default().to_string(),
            });
        }
    }
    d.edges_added = after
        .edges
        .iter()
        .filter(|e| !before.edges.contains(e))
        .cloned()
        .collect();
    d.edges_removed = before
        .edges
        .iter()
        .filter(|e| !after.edges.contains(e))
        .cloned()
        .collect();
    d
}
