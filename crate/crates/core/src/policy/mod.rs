//! The explainer policy: state encoding, masked action distribution,
//! ε-greedy selection and the reward signal. Training lives in `trainer`.

pub mod adam;
pub mod checkpoint;
pub mod lstm;
pub mod trainer;

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aog::{AogGrammar, NodeId, ParseGraph, Process};
use crate::belief::{project, BeliefState};
use crate::bubble::{enumerate_actions, BubbleAction, DialogHistory, ACTIONS_PER_NODE};
use crate::error::{fail, ErrorCode, Result};

pub use lstm::{Dims, PolicyParams, RecurrentState};

/// Fixed-width state layout for one grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoder {
    pub nodes: usize,
    pub edges: usize,
    pub grammar: u64,
}

impl Encoder {
    pub fn new(grammar: &AogGrammar) -> Self {
        Encoder {
            nodes: grammar.node_count(),
            edges: grammar.edge_count(),
            grammar: grammar.hash().short(),
        }
    }

    pub fn graph_block(&self) -> usize {
        self.nodes + self.edges
    }

    /// Previous bubble: attention one-hot, act, σ₁ and σ₂ one-hots.
    pub fn history_width(&self) -> usize {
        self.nodes + 9
    }

    pub fn width(&self) -> usize {
        2 * self.graph_block() + self.nodes + self.history_width()
    }

    pub fn actions(&self) -> usize {
        self.nodes * ACTIONS_PER_NODE
    }

    pub fn dims(&self, hidden: usize) -> Dims {
        Dims {
            input: self.width(),
            hidden,
            actions: self.actions(),
        }
    }
}

/// s_i as a flat 0/1 vector: pg^M nodes and edges, projected pg^UinM nodes
/// and edges (zeroed when `ablated`), the question subject, and the last
/// bubble shown.
#[allow(clippy::too_many_arguments)]
pub fn encode_state(
    encoder: &Encoder,
    pg_m: &ParseGraph,
    belief: &BeliefState,
    question: Option<NodeId>,
    history: &DialogHistory,
    grammar: &AogGrammar,
    threshold: f64,
    ablated: bool,
) -> Result<Vec<f64>> {
    if pg_m.grammar_tag() != encoder.grammar
        || grammar.hash().short() != encoder.grammar
        || belief.len() != encoder.nodes
    {
        return fail(ErrorCode::GrammarMismatch, "state inputs belong to different grammars");
    }
    let mut x = vec![0.0; encoder.width()];
    let block = encoder.graph_block();
    let mut graph_bits = |pg: &ParseGraph, base: usize| {
        for v in pg.nodes() {
            x[base + v.index()] = 1.0;
        }
        for e in pg.edges() {
            x[base + encoder.nodes + e.index()] = 1.0;
        }
    };
    graph_bits(pg_m, 0);
    if !ablated {
        graph_bits(&project(belief, grammar, threshold), block);
    }
    let q_base = 2 * block;
    if let Some(q) = question {
        x[q_base + q.index()] = 1.0;
    }
    let h_base = q_base + encoder.nodes;
    if let Some(last) = history.bubbles.last() {
        let a = last.action;
        x[h_base + a.attention.index()] = 1.0;
        x[h_base + encoder.nodes + a.act.index()] = 1.0;
        x[h_base + encoder.nodes + 3 + a.space as usize] = 1.0;
        x[h_base + encoder.nodes + 6 + a.scale as usize] = 1.0;
    }
    Ok(x)
}

/// Valid action indices for this turn, ascending.
pub fn action_mask(
    grammar: &AogGrammar,
    pg_m: &ParseGraph,
    relevant: &BTreeSet<NodeId>,
    history: &DialogHistory,
    bind_threshold: f64,
    forbid_recurrence: bool,
) -> Result<Vec<u32>> {
    let mut valid: Vec<u32> = enumerate_actions(grammar, pg_m, relevant, bind_threshold)?
        .into_iter()
        .filter(|a| !forbid_recurrence || !history.contains_action(a))
        .map(|a| a.index() as u32)
        .collect();
    valid.sort_unstable();
    valid.dedup();
    Ok(valid)
}

/// Masked action distribution and state value for the latest step.
pub fn action_distribution(logits: &[f64], valid: &[u32]) -> Result<Vec<f64>> {
    if valid.is_empty() {
        return fail(ErrorCode::NoValidAction, "no bubble can be generated in this state");
    }
    Ok(lstm::masked_softmax(logits, valid))
}

/// With probability ε a uniform valid action; otherwise argmax (ties to the
/// lowest index) when `greedy`, else a sample from `dist`. Returns the
/// action and the behaviour probability of having picked it.
pub fn select_action(dist: &[f64], valid: &[u32], epsilon: f64, greedy: bool, rng: &mut impl Rng) -> (u32, f64) {
    assert!(!valid.is_empty());
    let best = argmax(dist, valid);
    let explore = epsilon > 0.0 && rng.random::<f64>() < epsilon;
    let action = if explore {
        valid[rng.random_range(0..valid.len())]
    } else if greedy {
        best
    } else {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = *valid.last().expect("non-empty");
        for &a in valid {
            acc += dist[a as usize];
            if u < acc {
                pick = a;
                break;
            }
        }
        pick
    };
    let exploit = match (greedy, action == best) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        (false, _) => dist[action as usize],
    };
    (action, epsilon / valid.len() as f64 + (1.0 - epsilon) * exploit)
}

/// Highest-probability valid action, lowest index on ties.
pub fn argmax(dist: &[f64], valid: &[u32]) -> u32 {
    let mut best = valid[0];
    for &a in valid {
        if dist[a as usize] > dist[best as usize] {
            best = a;
        }
    }
    best
}

/// Per-turn user feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub ss: i8,
    pub cf: u8,
    pub sf: u8,
}

impl FeedbackRecord {
    pub fn validate(&self) -> Result<()> {
        if self.ss != 1 && self.ss != -1 {
            return fail(ErrorCode::Range, format!("ss must be +1 or -1, got {}", self.ss));
        }
        for (name, v) in [("cf", self.cf), ("sf", self.sf)] {
            if !(1..=5).contains(&v) {
                return fail(ErrorCode::Range, format!("{name} must be in 1..=5, got {v}"));
            }
        }
        Ok(())
    }
}

pub const REWARD_EXPONENT_CLAMP: f64 = 10.0;

/// r_i = (1/i) exp(clamp(ss cf' sf' / C_i, -10, 10)) with cf' = (cf-1)/4 and
/// sf' = (sf-1)/4.
pub fn reward(feedback: &FeedbackRecord, cost: f64, turn: u32) -> Result<f64> {
    feedback.validate()?;
    if cost.is_nan() || cost <= 0.0 {
        return fail(ErrorCode::ZeroCost, "reward needs a positive dialog cost");
    }
    if turn == 0 {
        return fail(ErrorCode::Range, "turns are counted from 1");
    }
    let cf = (feedback.cf as f64 - 1.0) / 4.0;
    let sf = (feedback.sf as f64 - 1.0) / 4.0;
    let exponent = (feedback.ss as f64 * cf * sf / cost).clamp(-REWARD_EXPONENT_CLAMP, REWARD_EXPONENT_CLAMP);
    Ok(exponent.exp() / turn as f64)
}

/// Linear ε schedule from 0.6 at step 0 to 0 at `total`.
pub fn anneal_epsilon(step: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    0.6 * (1.0 - step.min(total) as f64 / total as f64)
}

/// Which nodes of pg^M the explainer may put a bubble on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionScope {
    /// The task's critical nodes.
    Critical,
    /// Every subject of the task's question catalog.
    Catalog,
}

/// Explainer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub gamma: f64,
    pub batch_episodes: usize,
    pub pool_capacity: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub importance_clip: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub forbid_recurrence: bool,
    pub scope: ActionScope,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 32,
            gamma: 0.95,
            batch_episodes: 32,
            pool_capacity: 5000,
            entropy_coef: 0.01,
            value_coef: 0.5,
            importance_clip: 10.0,
            learning_rate: 0.001,
            grad_clip: 5.0,
            forbid_recurrence: false,
            scope: ActionScope::Critical,
        }
    }
}

/// Trained explainer: weights plus how to read the state.
#[derive(Debug, Clone, PartialEq)]
pub struct Explainer {
    pub params: PolicyParams,
    pub encoder: Encoder,
    pub config: PolicyConfig,
    /// Belief features zeroed in the state.
    pub ablated: bool,
}

impl Explainer {
    pub fn new(grammar: &AogGrammar, config: PolicyConfig, ablated: bool, rng: &mut impl Rng) -> Self {
        let encoder = Encoder::new(grammar);
        Explainer {
            params: PolicyParams::init(encoder.dims(config.hidden), rng),
            encoder,
            config,
            ablated,
        }
    }
}

/// Decodes an action index into the bubble quadruple it stands for.
pub fn decode_action(index: u32) -> BubbleAction {
    BubbleAction::from_index(index as usize)
}

pub fn act_of(index: u32) -> Process {
    decode_action(index).act
}
