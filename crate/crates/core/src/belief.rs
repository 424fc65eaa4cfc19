//! The machine's model of the user's mind.
//!
//! The posterior over the user's parse graph is factorised per node: each
//! node carries the probability that the user has grasped it. Evidence is
//! the current question and the bubbles shown so far, weighed through
//! likelihood tables estimated from logged games. Bubbles that clearly
//! reveal a node additionally lift it to a floor.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aog::{AogGrammar, NodeId, ParseGraph};
use crate::bubble::{Bubble, BubbleAction, DialogHistory};
use crate::error::{fail, ErrorCode, Result};

pub const TABLES_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefConfig {
    /// Grasp floor for nodes fully inside a bubble with scale >= 9.
    pub strong_reveal_floor: f64,
    /// Grasp floor for nodes fully inside a light (scale 1) bubble.
    pub light_reveal_floor: f64,
    /// Projection threshold.
    pub threshold: f64,
    /// Laplace pseudo-count.
    pub smoothing: f64,
}

impl Default for BeliefConfig {
    fn default() -> Self {
        BeliefConfig {
            strong_reveal_floor: 0.9,
            light_reveal_floor: 0.6,
            threshold: 0.5,
            smoothing: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    grasp: Vec<f64>,
    pub turn: u32,
}

/// Fresh belief: the user has grasped nothing.
pub fn init_belief(grammar: &AogGrammar) -> BeliefState {
    BeliefState {
        grasp: vec![0.0; grammar.node_count()],
        turn: 0,
    }
}

impl BeliefState {
    pub fn grasp(&self, v: NodeId) -> f64 {
        self.grasp[v.index()]
    }

    pub fn set_grasp(&mut self, v: NodeId, p: f64) {
        self.grasp[v.index()] = p.clamp(0.0, 1.0);
    }

    pub fn values(&self) -> &[f64] {
        &self.grasp
    }

    pub fn len(&self) -> usize {
        self.grasp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grasp.is_empty()
    }
}

/// Key for the bubble likelihood table.
pub fn bubble_signature(grammar: &AogGrammar, action: &BubbleAction) -> String {
    format!(
        "{}/{}/{}{}",
        grammar.name(action.attention),
        action.act.as_str(),
        action.space,
        action.scale
    )
}

/// Occurrence counts of one evidence key for one node, split by whether the
/// node was demonstrated grasped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub grasped: u64,
    pub not_grasped: u64,
}

/// One logged game reduced to what likelihood estimation needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DialogLog {
    pub questions: Vec<String>,
    pub bubbles: Vec<String>,
    /// Nodes the user demonstrably grasped (critical nodes of a solved task).
    pub grasped: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LikelihoodTables {
    pub smoothing: f64,
    question: BTreeMap<(String, NodeId), Counts>,
    bubble: BTreeMap<(String, NodeId), Counts>,
    /// Events observed per node and grasp status: [question, bubble].
    totals: BTreeMap<NodeId, [Counts; 2]>,
}

/// Ratio of the normalised likelihood pair: p(e | grasped) / p(e | not).
fn pair_ratio(p_grasped: f64, p_not: f64) -> f64 {
    p_grasped / p_not
}

impl LikelihoodTables {
    /// Tables with no rows: every lookup falls back to 0.5/0.5.
    pub fn uninformative() -> Self {
        LikelihoodTables {
            smoothing: 1.0,
            ..Default::default()
        }
    }

    fn smoothed(&self, n: u64, total: u64) -> f64 {
        (n as f64 + self.smoothing) / (total as f64 + 2.0 * self.smoothing)
    }

    fn lookup(&self, table: usize, key: &str, v: NodeId) -> Option<(f64, f64)> {
        let map = if table == 0 { &self.question } else { &self.bubble };
        let c = map.get(&(key.to_owned(), v))?;
        let t = self.totals.get(&v).map(|t| t[table]).unwrap_or_default();
        Some((self.smoothed(c.grasped, t.grasped), self.smoothed(c.not_grasped, t.not_grasped)))
    }

    /// Smoothed p(question | node grasped?) before row normalisation.
    pub fn question_smoothed(&self, question: &str, v: NodeId, grasped: bool) -> Option<f64> {
        self.lookup(0, question, v).map(|(g, n)| if grasped { g } else { n })
    }

    /// Row-normalised (p(q | grasped), p(q | not)); 0.5/0.5 for missing rows.
    pub fn question_row(&self, question: &str, v: NodeId) -> (f64, f64) {
        normalise(self.lookup(0, question, v))
    }

    pub fn bubble_row(&self, signature: &str, v: NodeId) -> (f64, f64) {
        normalise(self.lookup(1, signature, v))
    }

    /// Sets a row directly, bypassing counting. The pair is normalised.
    pub fn set_question_row(&mut self, question: &str, v: NodeId, p_grasped: f64, p_not: f64) {
        set_row(&mut self.question, &mut self.totals, 0, question, v, p_grasped, p_not);
    }

    pub fn set_bubble_row(&mut self, signature: &str, v: NodeId, p_grasped: f64, p_not: f64) {
        set_row(&mut self.bubble, &mut self.totals, 1, signature, v, p_grasped, p_not);
    }

    pub fn row_count(&self) -> usize {
        self.question.len() + self.bubble.len()
    }

    pub fn to_json(&self, grammar: &AogGrammar) -> String {
        let rows = |map: &BTreeMap<(String, NodeId), Counts>| -> Vec<TableRow> {
            map.iter()
                .map(|((k, v), c)| TableRow {
                    key: k.clone(),
                    node: grammar.name(*v).to_owned(),
                    grasped: c.grasped,
                    not_grasped: c.not_grasped,
                })
                .collect()
        };
        let file = TablesFile {
            version: TABLES_VERSION,
            grammar: grammar.hash().to_hex(),
            smoothing: self.smoothing,
            question: rows(&self.question),
            bubble: rows(&self.bubble),
            totals: self
                .totals
                .iter()
                .map(|(v, [q, b])| TotalsRow {
                    node: grammar.name(*v).to_owned(),
                    question: *q,
                    bubble: *b,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("tables serialise")
    }

    pub fn from_json(text: &str, grammar: &AogGrammar) -> Result<Self> {
        let file: TablesFile = serde_json::from_str(text)
            .map_err(|e| crate::Error::new(ErrorCode::SchemaError, format!("likelihood tables: {e}")))?;
        if file.version != TABLES_VERSION {
            return fail(
                ErrorCode::SchemaError,
                format!("unsupported likelihood table version {}", file.version),
            );
        }
        if file.grammar != grammar.hash().to_hex() {
            return fail(ErrorCode::GrammarMismatch, "likelihood tables were estimated for another grammar");
        }
        let node = |name: &str| {
            grammar
                .lookup(name)
                .ok_or_else(|| crate::Error::new(ErrorCode::GrammarMismatch, format!("unknown node `{name}`")))
        };
        let mut t = LikelihoodTables {
            smoothing: file.smoothing,
            ..Default::default()
        };
        for r in file.question {
            t.question.insert((r.key, node(&r.node)?), Counts { grasped: r.grasped, not_grasped: r.not_grasped });
        }
        for r in file.bubble {
            t.bubble.insert((r.key, node(&r.node)?), Counts { grasped: r.grasped, not_grasped: r.not_grasped });
        }
        for r in file.totals {
            t.totals.insert(node(&r.node)?, [r.question, r.bubble]);
        }
        Ok(t)
    }
}

fn normalise(pair: Option<(f64, f64)>) -> (f64, f64) {
    match pair {
        Some((g, n)) => (g / (g + n), n / (g + n)),
        None => (0.5, 0.5),
    }
}

// Direct rows are stored as counts scaled so that smoothing is negligible.
fn set_row(
    map: &mut BTreeMap<(String, NodeId), Counts>,
    totals: &mut BTreeMap<NodeId, [Counts; 2]>,
    table: usize,
    key: &str,
    v: NodeId,
    p_grasped: f64,
    p_not: f64,
) {
    const SCALE: f64 = 1e9;
    map.insert(
        (key.to_owned(), v),
        Counts {
            grasped: (p_grasped * SCALE).round() as u64,
            not_grasped: (p_not * SCALE).round() as u64,
        },
    );
    let t = totals.entry(v).or_default();
    t[table] = Counts {
        grasped: SCALE as u64,
        not_grasped: SCALE as u64,
    };
}

#[derive(Serialize, Deserialize)]
struct TableRow {
    key: String,
    node: String,
    grasped: u64,
    not_grasped: u64,
}

#[derive(Serialize, Deserialize)]
struct TotalsRow {
    node: String,
    question: Counts,
    bubble: Counts,
}

#[derive(Serialize, Deserialize)]
struct TablesFile {
    version: u32,
    grammar: String,
    smoothing: f64,
    question: Vec<TableRow>,
    bubble: Vec<TableRow>,
    totals: Vec<TotalsRow>,
}

/// Frequency estimates of p(q | node grasped?) and p(bubble | node grasped?)
/// with Laplace smoothing.
pub fn estimate_likelihoods(grammar: &AogGrammar, logs: &[DialogLog], smoothing: f64) -> Result<LikelihoodTables> {
    if logs.is_empty() {
        return fail(ErrorCode::EmptyLogs, "likelihood estimation needs at least one game log");
    }
    let mut t = LikelihoodTables {
        smoothing,
        ..Default::default()
    };
    for log in logs {
        for v in grammar.node_ids() {
            let g = log.grasped.contains(&v);
            let bump = |c: &mut Counts| {
                if g {
                    c.grasped += 1
                } else {
                    c.not_grasped += 1
                }
            };
            let totals = t.totals.entry(v).or_default();
            for _ in &log.questions {
                bump(&mut totals[0]);
            }
            for _ in &log.bubbles {
                bump(&mut totals[1]);
            }
            for q in &log.questions {
                bump(t.question.entry((q.clone(), v)).or_default());
            }
            for b in &log.bubbles {
                bump(t.bubble.entry((b.clone(), v)).or_default());
            }
        }
    }
    Ok(t)
}

fn odds_to_p(odds: f64) -> f64 {
    if odds.is_infinite() {
        1.0
    } else {
        odds / (1.0 + odds)
    }
}

/// Reveal floor a bubble imposes on `v`, if `v` lies fully inside it.
fn reveal_floor(bubble: &Bubble, v: NodeId, pg_m: &ParseGraph, cfg: &BeliefConfig) -> Option<f64> {
    let det = pg_m.detection(v)?;
    if !bubble.region.contains(&det.region) {
        return None;
    }
    Some(if bubble.sigma2() >= 9.0 {
        cfg.strong_reveal_floor
    } else {
        cfg.light_reveal_floor
    })
}

/// Posterior update for turn `i`: per node, odds = LR(question) x prod LR(bubble)
/// from a 1:1 prior whenever some evidence is informative; nodes without
/// informative evidence keep their previous value. Reveal floors apply on top
/// and never lower a covered node.
pub fn update_belief(
    belief: &BeliefState,
    question: &str,
    history: &DialogHistory,
    tables: &LikelihoodTables,
    grammar: &AogGrammar,
    pg_m: &ParseGraph,
    cfg: &BeliefConfig,
) -> BeliefState {
    let signatures: Vec<String> = history
        .bubbles
        .iter()
        .map(|b| bubble_signature(grammar, &b.action))
        .collect();
    let mut next = belief.clone();
    for v in grammar.node_ids() {
        let old = belief.grasp(v);
        let mut log_odds = 0.0f64;
        let mut informative = false;
        let mut absorb = |(pg, pn): (f64, f64)| {
            let lr = pair_ratio(pg, pn);
            if (lr - 1.0).abs() > 1e-12 {
                informative = true;
                log_odds += lr.ln();
            }
        };
        absorb(tables.question_row(question, v));
        for sig in &signatures {
            absorb(tables.bubble_row(sig, v));
        }
        let mut p = if informative { odds_to_p(log_odds.exp()) } else { old };
        let floor = history
            .bubbles
            .iter()
            .filter_map(|b| reveal_floor(b, v, pg_m, cfg))
            .fold(None, |acc: Option<f64>, f| Some(acc.map_or(f, |a| a.max(f))));
        if let Some(f) = floor {
            p = p.max(old).max(f);
        }
        next.set_grasp(v, p);
    }
    next.turn = belief.turn + 1;
    next
}

/// The user's parse graph as the machine sees it: nodes at or above the
/// threshold plus the grammar edges between them.
pub fn project(belief: &BeliefState, grammar: &AogGrammar, threshold: f64) -> ParseGraph {
    ParseGraph::induced(grammar, grammar.node_ids().filter(|&v| belief.grasp(v) >= threshold))
}
