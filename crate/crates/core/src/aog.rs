//! And-Or graph grammar and parse graphs.
//!
//! A grammar is loaded once from the line-oriented `.aog` format and is
//! immutable afterwards. Parse graphs are subgraphs of a grammar and carry
//! the grammar's fingerprint so that mixing graphs from different grammars
//! is caught at the algebra boundary.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{fail, ErrorCode, Result};

/// Index of a node inside its grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

/// Index of an edge inside its grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    And,
    Or,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Decomposition,
    Context,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AogNode {
    /// Symbolic id as written in the grammar file, e.g. `left-arm`.
    pub name: String,
    pub kind: NodeKind,
    pub label: String,
    /// Named categorical slots, in declaration order.
    pub slots: Vec<(String, Vec<String>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AogEdge {
    pub parent: NodeId,
    pub child: NodeId,
    pub relation: Relation,
}

/// SHA-256 of the canonical grammar text.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct GrammarHash(pub [u8; 32]);

impl GrammarHash {
    /// First eight bytes as an integer; used as the parse-graph tag.
    pub fn short(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().unwrap())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for GrammarHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrammarHash({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for GrammarHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone)]
pub struct AogGrammar {
    nodes: Vec<AogNode>,
    edges: Vec<AogEdge>,
    root: NodeId,
    hash: GrammarHash,
    by_name: HashMap<String, NodeId>,
    children: Vec<Vec<NodeId>>,
    parents: Vec<Vec<NodeId>>,
    depth: Vec<u32>,
    /// Decomposition order with parents before children.
    topo: Vec<NodeId>,
}

impl AogGrammar {
    /// Parses and validates a grammar document.
    pub fn parse(document: &str) -> Result<Self> {
        let mut nodes: Vec<AogNode> = Vec::new();
        let mut by_name = HashMap::new();
        let mut raw_edges: Vec<(usize, String, String, Relation)> = Vec::new();

        for (lineno, raw) in document.lines().enumerate() {
            let lineno = lineno + 1;
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            };
            let mut tokens = line.split_whitespace();
            let Some(keyword) = tokens.next() else {
                continue;
            };
            match keyword {
                "node" => {
                    let (Some(name), Some(kind), Some(label)) =
                        (tokens.next(), tokens.next(), tokens.next())
                    else {
                        return fail(
                            ErrorCode::SchemaError,
                            format!("line {lineno}: expected `node <id> <kind> <label>`"),
                        );
                    };
                    let kind = match kind {
                        "AND" => NodeKind::And,
                        "OR" => NodeKind::Or,
                        "TERM" => NodeKind::Terminal,
                        other => {
                            return fail(
                                ErrorCode::SchemaError,
                                format!("line {lineno}: unknown node kind `{other}`"),
                            )
                        }
                    };
                    let mut slots = Vec::new();
                    for slot in tokens {
                        let Some((key, values)) = slot.split_once('=') else {
                            return fail(
                                ErrorCode::SchemaError,
                                format!("line {lineno}: malformed slot `{slot}`"),
                            );
                        };
                        let values: Vec<String> = values
                            .split('|')
                            .filter(|v| !v.is_empty())
                            .map(str::to_owned)
                            .collect();
                        if key.is_empty() || values.is_empty() {
                            return fail(
                                ErrorCode::SchemaError,
                                format!("line {lineno}: empty slot `{slot}`"),
                            );
                        }
                        slots.push((key.to_owned(), values));
                    }
                    if by_name.contains_key(name) {
                        return fail(
                            ErrorCode::SchemaError,
                            format!("line {lineno}: duplicate node id `{name}`"),
                        );
                    }
                    by_name.insert(name.to_owned(), NodeId(nodes.len() as u32));
                    nodes.push(AogNode {
                        name: name.to_owned(),
                        kind,
                        label: label.to_owned(),
                        slots,
                    });
                }
                "edge" => {
                    let (Some(parent), Some(child), Some(rel)) =
                        (tokens.next(), tokens.next(), tokens.next())
                    else {
                        return fail(
                            ErrorCode::SchemaError,
                            format!("line {lineno}: expected `edge <parent> <child> <relation>`"),
                        );
                    };
                    if tokens.next().is_some() {
                        return fail(
                            ErrorCode::SchemaError,
                            format!("line {lineno}: trailing tokens after edge"),
                        );
                    }
                    let relation = match rel {
                        "decomp" => Relation::Decomposition,
                        "context" => Relation::Context,
                        other => {
                            return fail(
                                ErrorCode::SchemaError,
                                format!("line {lineno}: unknown relation `{other}`"),
                            )
                        }
                    };
                    raw_edges.push((lineno, parent.to_owned(), child.to_owned(), relation));
                }
                other => {
                    return fail(
                        ErrorCode::SchemaError,
                        format!("line {lineno}: unknown record `{other}`"),
                    )
                }
            }
        }

        let mut edges = Vec::with_capacity(raw_edges.len());
        for (lineno, parent, child, relation) in raw_edges {
            let lookup = |name: &str| {
                by_name.get(name).copied().ok_or_else(|| {
                    crate::Error::new(
                        ErrorCode::DanglingRef,
                        format!("line {lineno}: edge references unknown node `{name}`"),
                    )
                })
            };
            let edge = AogEdge {
                parent: lookup(&parent)?,
                child: lookup(&child)?,
                relation,
            };
            if edges.contains(&edge) {
                return fail(
                    ErrorCode::SchemaError,
                    format!("line {lineno}: duplicate edge {parent} -> {child}"),
                );
            }
            edges.push(edge);
        }
        Self::from_parts(nodes, edges)
    }

    pub fn from_parts(nodes: Vec<AogNode>, edges: Vec<AogEdge>) -> Result<Self> {
        if nodes.is_empty() {
            return fail(ErrorCode::SchemaError, "grammar declares no nodes");
        }
        let n = nodes.len();
        let mut by_name = HashMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.label.is_empty() || node.name.is_empty() {
                return fail(ErrorCode::SchemaError, "node id and label must be non-empty");
            }
            if by_name.insert(node.name.clone(), NodeId(i as u32)).is_some() {
                return fail(
                    ErrorCode::SchemaError,
                    format!("duplicate node id `{}`", node.name),
                );
            }
        }
        let mut children = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        let mut has_any_parent = vec![false; n];
        for e in &edges {
            if e.parent.index() >= n || e.child.index() >= n {
                return fail(ErrorCode::DanglingRef, "edge references unknown node index");
            }
            has_any_parent[e.child.index()] = true;
            if e.relation == Relation::Decomposition {
                children[e.parent.index()].push(e.child);
                parents[e.child.index()].push(e.parent);
            }
            if nodes[e.parent.index()].kind == NodeKind::Terminal {
                return fail(
                    ErrorCode::SchemaError,
                    format!("terminal `{}` cannot have children", nodes[e.parent.index()].name),
                );
            }
        }

        // Kahn's algorithm over decomposition edges.
        let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<NodeId> = (0..n)
            .filter(|&i| indegree[i] == 0)
            .map(|i| NodeId(i as u32))
            .collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            topo.push(v);
            for &c in &children[v.index()] {
                indegree[c.index()] -= 1;
                if indegree[c.index()] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if topo.len() != n {
            return fail(ErrorCode::CycleError, "decomposition edges contain a cycle");
        }

        let roots: Vec<usize> = (0..n).filter(|&i| !has_any_parent[i]).collect();
        let root = match roots.as_slice() {
            [r] => NodeId(*r as u32),
            [] => return fail(ErrorCode::SchemaError, "grammar has no root"),
            _ => {
                let names: Vec<&str> = roots.iter().map(|&r| nodes[r].name.as_str()).collect();
                return fail(
                    ErrorCode::SchemaError,
                    format!("grammar has several roots: {}", names.join(", ")),
                );
            }
        };
        // A single parentless node does not guarantee every other node
        // hangs off it by decomposition.
        for i in 0..n {
            if i != root.index() && parents[i].is_empty() {
                return fail(
                    ErrorCode::SchemaError,
                    format!("node `{}` is not reachable by decomposition", nodes[i].name),
                );
            }
        }

        for (i, node) in nodes.iter().enumerate() {
            let k = children[i].len();
            match node.kind {
                NodeKind::Or if k < 2 => {
                    return fail(
                        ErrorCode::SchemaError,
                        format!("OR node `{}` needs at least two children", node.name),
                    )
                }
                NodeKind::And if k < 1 => {
                    return fail(
                        ErrorCode::SchemaError,
                        format!("AND node `{}` needs at least one child", node.name),
                    )
                }
                _ => {}
            }
        }

        let mut depth = vec![0u32; n];
        for &v in &topo {
            for &c in &children[v.index()] {
                depth[c.index()] = depth[c.index()].max(depth[v.index()] + 1);
            }
        }

        let hash = canonical_hash(&nodes, &edges);
        Ok(AogGrammar {
            nodes,
            edges,
            root,
            hash,
            by_name,
            children,
            parents,
            depth,
            topo,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            crate::Error::new(
                ErrorCode::SchemaError,
                format!("cannot read {}: {e}", path.as_ref().display()),
            )
        })?;
        Self::parse(&text)
    }

    pub fn nodes(&self) -> &[AogNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[AogEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> &AogNode {
        &self.nodes[id.index()]
    }

    pub fn edge(&self, id: EdgeId) -> &AogEdge {
        &self.edges[id.index()]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> + '_ {
        (0..self.edges.len() as u32).map(EdgeId)
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn hash(&self) -> GrammarHash {
        self.hash
    }

    pub fn lookup(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].name
    }

    /// Decomposition children in declaration order.
    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.index()]
    }

    /// Decomposition parents.
    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.parents[id.index()]
    }

    pub fn depth(&self, id: NodeId) -> u32 {
        self.depth[id.index()]
    }

    pub fn is_terminal(&self, id: NodeId) -> bool {
        self.nodes[id.index()].kind == NodeKind::Terminal
    }

    /// Nodes ordered parents-first along decomposition edges.
    pub fn topological(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Every edge (any relation) whose endpoints are `a` and `b` in either direction.
    pub fn edges_between(&self, a: NodeId, b: NodeId) -> impl Iterator<Item = EdgeId> + '_ {
        self.edges.iter().enumerate().filter_map(move |(i, e)| {
            ((e.parent == a && e.child == b) || (e.parent == b && e.child == a))
                .then_some(EdgeId(i as u32))
        })
    }

    /// `id` and all of its decomposition descendants.
    pub fn descendants(&self, id: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            if out.insert(v) {
                stack.extend(self.children(v).iter().copied());
            }
        }
        out
    }

    /// `id` and all of its decomposition ancestors.
    pub fn ancestors(&self, id: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            if out.insert(v) {
                stack.extend(self.parents(v).iter().copied());
            }
        }
        out
    }
}

fn canonical_hash(nodes: &[AogNode], edges: &[AogEdge]) -> GrammarHash {
    let mut h = Sha256::new();
    for n in nodes {
        let kind = match n.kind {
            NodeKind::And => "AND",
            NodeKind::Or => "OR",
            NodeKind::Terminal => "TERM",
        };
        h.update(format!("node {} {} {}", n.name, kind, n.label));
        for (k, vs) in &n.slots {
            h.update(format!(" {k}={}", vs.join("|")));
        }
        h.update("\n");
    }
    for e in edges {
        let rel = match e.relation {
            Relation::Decomposition => "decomp",
            Relation::Context => "context",
        };
        h.update(format!(
            "edge {} {} {rel}\n",
            nodes[e.parent.index()].name,
            nodes[e.child.index()].name
        ));
    }
    GrammarHash(h.finalize().into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Region {
    pub fn new(cx: f64, cy: f64, r: f64) -> Result<Self> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(cx) || !in_unit(cy) || !(r > 0.0 && r <= 0.5) {
            return fail(
                ErrorCode::SchemaError,
                format!("invalid region ({cx}, {cy}, r={r})"),
            );
        }
        Ok(Region { cx, cy, r })
    }

    pub fn distance_to(&self, other: &Region) -> f64 {
        ((self.cx - other.cx).powi(2) + (self.cy - other.cy).powi(2)).sqrt()
    }

    /// True when `inner` lies entirely within this circle.
    pub fn contains(&self, inner: &Region) -> bool {
        self.distance_to(inner) + inner.r <= self.r + 1e-12
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        (self.cx - x).powi(2) + (self.cy - y).powi(2) <= self.r * self.r + 1e-12
    }
}

/// The inference process that produced a detection; doubles as the
/// explanation act of a bubble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    Alpha,
    Beta,
    Gamma,
}

impl Process {
    pub const ALL: [Process; 3] = [Process::Alpha, Process::Beta, Process::Gamma];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Process::Alpha => "alpha",
            Process::Beta => "beta",
            Process::Gamma => "gamma",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "alpha" => Some(Process::Alpha),
            "beta" => Some(Process::Beta),
            "gamma" => Some(Process::Gamma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub process: Process,
    pub confidence: f64,
    pub region: Region,
    /// Ground truth; never shown to users.
    pub correct: bool,
}

/// A subgraph of a grammar. Role-neutral: holds the machine's parse, the
/// projected user model, and the user's predicted model of the machine.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParseGraph {
    grammar: u64,
    nodes: BTreeSet<NodeId>,
    edges: BTreeSet<EdgeId>,
    attributes: BTreeMap<NodeId, BTreeMap<String, String>>,
    detections: BTreeMap<NodeId, DetectionRecord>,
}

impl ParseGraph {
    pub fn empty(grammar: &AogGrammar) -> Self {
        ParseGraph {
            grammar: grammar.hash().short(),
            ..Default::default()
        }
    }

    /// Node set plus every grammar edge whose endpoints are both included.
    pub fn induced(grammar: &AogGrammar, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let mut pg = Self::empty(grammar);
        pg.nodes = nodes.into_iter().collect();
        pg.close_edges(grammar);
        pg
    }

    /// The whole grammar as a parse graph.
    pub fn full(grammar: &AogGrammar) -> Self {
        Self::induced(grammar, grammar.node_ids())
    }

    pub fn grammar_tag(&self) -> u64 {
        self.grammar
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<EdgeId> {
        &self.edges
    }

    pub fn detections(&self) -> &BTreeMap<NodeId, DetectionRecord> {
        &self.detections
    }

    pub fn detection(&self, id: NodeId) -> Option<&DetectionRecord> {
        self.detections.get(&id)
    }

    pub fn attributes(&self) -> &BTreeMap<NodeId, BTreeMap<String, String>> {
        &self.attributes
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }

    pub fn insert_node(&mut self, id: NodeId) {
        self.nodes.insert(id);
    }

    pub fn insert_detection(&mut self, id: NodeId, record: DetectionRecord) {
        self.nodes.insert(id);
        self.detections.insert(id, record);
    }

    pub fn set_attribute(&mut self, id: NodeId, slot: &str, value: &str) {
        self.attributes
            .entry(id)
            .or_default()
            .insert(slot.to_owned(), value.to_owned());
    }

    /// Adds an edge. Both endpoints must already be present.
    pub fn insert_edge(&mut self, grammar: &AogGrammar, id: EdgeId) -> bool {
        let e = grammar.edge(id);
        if self.nodes.contains(&e.parent) && self.nodes.contains(&e.child) {
            self.edges.insert(id);
            true
        } else {
            false
        }
    }

    /// Adds every grammar edge whose endpoints are both present.
    pub fn close_edges(&mut self, grammar: &AogGrammar) {
        for id in grammar.edge_ids() {
            self.insert_edge(grammar, id);
        }
    }

    /// Subgraph on `keep` with the edges of `self` that stay valid.
    pub fn restrict(&self, grammar: &AogGrammar, keep: impl Fn(NodeId) -> bool) -> Self {
        let nodes: BTreeSet<NodeId> = self.nodes.iter().copied().filter(|&v| keep(v)).collect();
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&e| {
                let edge = grammar.edge(e);
                nodes.contains(&edge.parent) && nodes.contains(&edge.child)
            })
            .collect();
        ParseGraph {
            grammar: self.grammar,
            attributes: self
                .attributes
                .iter()
                .filter(|(k, _)| nodes.contains(k))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
            detections: self
                .detections
                .iter()
                .filter(|(k, _)| nodes.contains(k))
                .map(|(k, v)| (*k, *v))
                .collect(),
            nodes,
            edges,
        }
    }

    /// Nodes produced by `process`, with the edges between them.
    pub fn process_slice(&self, grammar: &AogGrammar, process: Process) -> Self {
        self.restrict(grammar, |v| {
            self.detections.get(&v).map(|d| d.process) == Some(process)
        })
    }

    /// Checks containment in the grammar and edge-endpoint closure.
    pub fn validate(&self, grammar: &AogGrammar) -> Result<()> {
        if self.grammar != grammar.hash().short() {
            return fail(ErrorCode::GrammarMismatch, "parse graph belongs to another grammar");
        }
        if let Some(v) = self.nodes.iter().find(|v| v.index() >= grammar.node_count()) {
            return fail(ErrorCode::DanglingRef, format!("node index {} out of range", v.0));
        }
        for &e in &self.edges {
            if e.index() >= grammar.edge_count() {
                return fail(ErrorCode::DanglingRef, format!("edge index {} out of range", e.0));
            }
            let edge = grammar.edge(e);
            if !self.nodes.contains(&edge.parent) || !self.nodes.contains(&edge.child) {
                return fail(
                    ErrorCode::SchemaError,
                    format!("edge {} has an endpoint outside the graph", e.0),
                );
            }
        }
        for d in self.detections.values() {
            if !(0.0..=1.0).contains(&d.confidence) {
                return fail(ErrorCode::SchemaError, "detection confidence outside [0,1]");
            }
        }
        Ok(())
    }

    /// Whether the decomposition edges inside the graph connect all of its
    /// nodes. Projections of beliefs and user predictions need not be.
    pub fn is_connected(&self, grammar: &AogGrammar) -> bool {
        let Some(&start) = self.nodes.iter().next() else {
            return true;
        };
        let mut adj: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for &e in &self.edges {
            let edge = grammar.edge(e);
            if edge.relation == Relation::Decomposition {
                adj.entry(edge.parent).or_default().push(edge.child);
                adj.entry(edge.child).or_default().push(edge.parent);
            }
        }
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &w in adj.get(&v).into_iter().flatten() {
                if seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        seen.len() == self.nodes.len()
    }

    pub fn node_names<'g>(&self, grammar: &'g AogGrammar) -> Vec<&'g str> {
        self.nodes.iter().map(|&v| grammar.name(v)).collect()
    }
}

/// ‖pg‖: node count plus edge count.
pub fn pg_size(pg: &ParseGraph) -> usize {
    pg.nodes.len() + pg.edges.len()
}

/// Node- and edge-wise intersection. Detections and attributes come from `a`.
pub fn pg_intersect(a: &ParseGraph, b: &ParseGraph) -> Result<ParseGraph> {
    if a.grammar != b.grammar {
        return fail(
            ErrorCode::GrammarMismatch,
            "cannot intersect parse graphs of different grammars",
        );
    }
    let nodes: BTreeSet<NodeId> = a.nodes.intersection(&b.nodes).copied().collect();
    // An edge present in both graphs already has both endpoints in both.
    let edges: BTreeSet<EdgeId> = a.edges.intersection(&b.edges).copied().collect();
    Ok(ParseGraph {
        grammar: a.grammar,
        attributes: a
            .attributes
            .iter()
            .filter(|(k, _)| nodes.contains(k))
            .map(|(k, v)| (*k, v.clone()))
            .collect(),
        detections: a
            .detections
            .iter()
            .filter(|(k, _)| nodes.contains(k))
            .map(|(k, v)| (*k, *v))
            .collect(),
        nodes,
        edges,
    })
}

/// Splits a parse graph into its correctly and incorrectly detected parts.
/// Edges stay with a part only when both endpoints share its polarity.
pub fn signed_partition(
    pg: &ParseGraph,
    grammar: &AogGrammar,
) -> Result<(ParseGraph, ParseGraph)> {
    if let Some(v) = pg.nodes.iter().find(|v| !pg.detections.contains_key(v)) {
        return fail(
            ErrorCode::MissingDetection,
            format!("node `{}` has no detection record", grammar.name(*v)),
        );
    }
    let positive = pg.restrict(grammar, |v| pg.detections[&v].correct);
    let negative = pg.restrict(grammar, |v| !pg.detections[&v].correct);
    Ok((positive, negative))
}
