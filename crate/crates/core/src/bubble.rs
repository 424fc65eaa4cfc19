//! Bubbles: the explainer's action space.
//!
//! A bubble reveals a circular part of the blurred scene around one node of
//! the machine's parse graph. The policy picks the quadruple
//! (attention, act, space level, scale level); content, discourse relation
//! and geometry follow from it and from the dialog so far.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aog::{AogGrammar, NodeId, ParseGraph, Process, Region};
use crate::error::{fail, ErrorCode, Result};

/// Spatial standard deviations, smallest to largest.
pub const SIGMA_SPACE: [f64; 3] = [1.15, 3.15, 4.5];
/// Scale (unblur) standard deviations, smallest to largest.
pub const SIGMA_SCALE: [f64; 3] = [1.0, 9.0, 15.0];

/// Number of action slots per grammar node: 3 acts x 3 space x 3 scale.
pub const ACTIONS_PER_NODE: usize = 27;

/// Explanation content in nats: differential entropy of the space/scale
/// Gaussian pair, `1 + ln(4 pi^2 s1^2 s2^2) / 2`.
pub fn content(sigma1: f64, sigma2: f64) -> Result<f64> {
    if !(sigma1 > 0.0 && sigma2 > 0.0) {
        return fail(
            ErrorCode::NonpositiveSigma,
            format!("sigmas must be positive, got ({sigma1}, {sigma2})"),
        );
    }
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    Ok(1.0 + 0.5 * (4.0 * pi2 * sigma1 * sigma1 * sigma2 * sigma2).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Discourse {
    Elaboration,
    Sequence,
    Recurrence,
    Restatement,
    Summary,
}

impl Discourse {
    /// Report column order.
    pub const ALL: [Discourse; 5] = [
        Discourse::Elaboration,
        Discourse::Sequence,
        Discourse::Recurrence,
        Discourse::Restatement,
        Discourse::Summary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Discourse::Elaboration => "Elaboration",
            Discourse::Sequence => "Sequence",
            Discourse::Recurrence => "Recurrence",
            Discourse::Restatement => "Restatement",
            Discourse::Summary => "Summary",
        }
    }
}

impl fmt::Display for Discourse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The part of a bubble the policy chooses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BubbleAction {
    pub attention: NodeId,
    pub act: Process,
    /// Index into [`SIGMA_SPACE`].
    pub space: u8,
    /// Index into [`SIGMA_SCALE`].
    pub scale: u8,
}

impl BubbleAction {
    pub fn sigma1(&self) -> f64 {
        SIGMA_SPACE[self.space as usize]
    }

    pub fn sigma2(&self) -> f64 {
        SIGMA_SCALE[self.scale as usize]
    }

    /// Position in the grammar-wide action space.
    pub fn index(&self) -> usize {
        self.attention.index() * ACTIONS_PER_NODE
            + self.act.index() * 9
            + self.space as usize * 3
            + self.scale as usize
    }

    pub fn from_index(index: usize) -> Self {
        let node = index / ACTIONS_PER_NODE;
        let rest = index % ACTIONS_PER_NODE;
        BubbleAction {
            attention: NodeId(node as u32),
            act: Process::ALL[rest / 9],
            space: ((rest % 9) / 3) as u8,
            scale: (rest % 3) as u8,
        }
    }

    /// Looks up the sigma levels for raw values.
    pub fn from_sigmas(attention: NodeId, act: Process, sigma1: f64, sigma2: f64) -> Option<Self> {
        let space = SIGMA_SPACE.iter().position(|&s| s == sigma1)? as u8;
        let scale = SIGMA_SCALE.iter().position(|&s| s == sigma2)? as u8;
        Some(BubbleAction {
            attention,
            act,
            space,
            scale,
        })
    }
}

/// A bubble as shown to the user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bubble {
    pub action: BubbleAction,
    pub content: f64,
    pub discourse: Discourse,
    pub region: Region,
}

impl Bubble {
    pub fn attention(&self) -> NodeId {
        self.action.attention
    }

    pub fn act(&self) -> Process {
        self.action.act
    }

    pub fn sigma1(&self) -> f64 {
        self.action.sigma1()
    }

    pub fn sigma2(&self) -> f64 {
        self.action.sigma2()
    }

    /// Builds the full bubble for `action` given the dialog so far.
    pub fn realize(action: BubbleAction, history: &DialogHistory, pg_m: &ParseGraph) -> Result<Self> {
        Ok(Bubble {
            action,
            content: content(action.sigma1(), action.sigma2())?,
            discourse: classify_discourse(&action, history),
            region: bubble_region(action.attention, action.sigma1(), pg_m)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DialogHistory {
    pub bubbles: Vec<Bubble>,
    pub questions: Vec<String>,
}

impl DialogHistory {
    pub fn len(&self) -> usize {
        self.bubbles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bubbles.is_empty()
    }

    pub fn push(&mut self, question: String, bubble: Bubble) {
        self.questions.push(question);
        self.bubbles.push(bubble);
    }

    pub fn contains_action(&self, action: &BubbleAction) -> bool {
        self.bubbles.iter().any(|b| b.action == *action)
    }
}

/// Relates a candidate bubble to the dialog history. Rules are tried in the
/// order recurrence, summary, elaboration, restatement, sequence; the
/// comparison for summary and elaboration is against the most recent bubble
/// on the same attention node.
pub fn classify_discourse(candidate: &BubbleAction, history: &DialogHistory) -> Discourse {
    if history.contains_action(candidate) {
        return Discourse::Recurrence;
    }
    let Some(prior) = history
        .bubbles
        .iter()
        .rev()
        .find(|b| b.attention() == candidate.attention)
    else {
        return Discourse::Sequence;
    };
    let prior = prior.action;
    if candidate.scale < prior.scale && candidate.space > prior.space {
        Discourse::Summary
    } else if candidate.space > prior.space || candidate.scale > prior.scale {
        Discourse::Elaboration
    } else {
        Discourse::Restatement
    }
}

/// Cumulative dialog cost: the sum of reciprocal bubble contents.
pub fn dialog_cost(history: &DialogHistory) -> Result<f64> {
    let mut total = 0.0;
    for b in &history.bubbles {
        if !(b.content > 0.0) {
            return fail(ErrorCode::ZeroContent, "bubble content must be positive");
        }
        total += 1.0 / b.content;
    }
    Ok(total)
}

/// Circle revealed by a bubble: centred on the attention node's detection,
/// radius scaled by `sigma1 / 1.15` and clamped to 0.5.
pub fn bubble_region(attention: NodeId, sigma1: f64, pg_m: &ParseGraph) -> Result<Region> {
    let Some(det) = pg_m.detection(attention) else {
        return fail(
            ErrorCode::NotDetected,
            format!("node {} is not in the machine's parse graph", attention.0),
        );
    };
    Ok(Region {
        cx: det.region.cx,
        cy: det.region.cy,
        r: (det.region.r * sigma1 / SIGMA_SPACE[0]).min(0.5),
    })
}

/// Explanation acts a detected node can be explained with.
pub fn available_acts(
    grammar: &AogGrammar,
    pg_m: &ParseGraph,
    node: NodeId,
    binding_threshold: f64,
) -> Vec<Process> {
    let Some(det) = pg_m.detection(node) else {
        return Vec::new();
    };
    let mut acts = Vec::with_capacity(3);
    if det.process == Process::Alpha {
        acts.push(Process::Alpha);
    }
    let kids = grammar.children(node);
    if !kids.is_empty() {
        let found = kids.iter().filter(|c| pg_m.contains(**c)).count();
        let binds = match grammar.node(node).kind {
            crate::aog::NodeKind::Or => found > 0,
            _ => found > 0 && found as f64 / kids.len() as f64 >= binding_threshold,
        };
        if binds {
            acts.push(Process::Beta);
        }
    }
    if grammar.parents(node).iter().any(|p| pg_m.contains(*p)) {
        acts.push(Process::Gamma);
    }
    if acts.is_empty() {
        // Whatever produced the detection can always be shown.
        acts.push(det.process);
    }
    acts
}

/// Every bubble the explainer could show for this parse: relevant detected
/// nodes x their acts x 3 space levels x 3 scale levels.
pub fn enumerate_actions(
    grammar: &AogGrammar,
    pg_m: &ParseGraph,
    relevant: &BTreeSet<NodeId>,
    binding_threshold: f64,
) -> Result<Vec<BubbleAction>> {
    if pg_m.nodes().is_empty() {
        return fail(ErrorCode::EmptyPg, "the machine's parse graph is empty");
    }
    let mut out = Vec::new();
    for &v in pg_m.nodes().iter().filter(|v| relevant.contains(v)) {
        for act in available_acts(grammar, pg_m, v, binding_threshold) {
            for space in 0..3u8 {
                for scale in 0..3u8 {
                    out.push(BubbleAction {
                        attention: v,
                        act,
                        space,
                        scale,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aog::DetectionRecord;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn content_values() {
        assert!(close(content(1.15, 1.0).unwrap(), 2.977639, 1e-6));
        assert!(close(content(4.5, 15.0).unwrap(), 7.050005, 1e-6));
        let c = |a, b| content(a, b).unwrap();
        assert!(c(3.15, 9.0) > c(1.15, 9.0));
        assert!(c(1.15, 9.0) > c(1.15, 1.0));
        assert_eq!(content(0.0, 1.0).unwrap_err().code, ErrorCode::NonpositiveSigma);
        assert_eq!(content(1.0, -2.0).unwrap_err().code, ErrorCode::NonpositiveSigma);
    }

    #[test]
    fn content_symmetric() {
        assert_eq!(content(3.0, 9.0).unwrap(), content(9.0, 3.0).unwrap());
    }

    fn act(node: u32, space: u8, scale: u8) -> BubbleAction {
        BubbleAction {
            attention: NodeId(node),
            act: Process::Alpha,
            space,
            scale,
        }
    }

    fn bubble(a: BubbleAction) -> Bubble {
        Bubble {
            action: a,
            content: content(a.sigma1(), a.sigma2()).unwrap(),
            discourse: Discourse::Sequence,
            region: Region::new(0.5, 0.5, 0.1).unwrap(),
        }
    }

    fn history(actions: &[BubbleAction]) -> DialogHistory {
        let mut h = DialogHistory::default();
        for a in actions {
            h.push("q".into(), bubble(*a));
        }
        h
    }

    #[test]
    fn discourse_examples() {
        let arm = 3;
        assert_eq!(
            classify_discourse(&act(arm, 0, 0), &DialogHistory::default()),
            Discourse::Sequence
        );
        let h = history(&[act(arm, 0, 0)]);
        assert_eq!(classify_discourse(&act(arm, 0, 0), &h), Discourse::Recurrence);
        let h = history(&[act(arm, 0, 1)]);
        assert_eq!(classify_discourse(&act(arm, 1, 1), &h), Discourse::Elaboration);
        let h = history(&[act(arm, 0, 2)]);
        assert_eq!(classify_discourse(&act(arm, 2, 0), &h), Discourse::Summary);
        // Same sigmas, different act: restatement.
        let h = history(&[act(arm, 1, 1)]);
        let beta = BubbleAction { act: Process::Beta, ..act(arm, 1, 1) };
        assert_eq!(classify_discourse(&beta, &h), Discourse::Restatement);
        // Smaller bubble on a seen node: restatement.
        assert_eq!(classify_discourse(&act(arm, 0, 0), &h), Discourse::Restatement);
        // Another node: sequence.
        assert_eq!(classify_discourse(&act(arm + 1, 0, 0), &h), Discourse::Sequence);
    }

    #[test]
    fn cost_examples() {
        assert_eq!(dialog_cost(&DialogHistory::default()).unwrap(), 0.0);
        let one = history(&[act(0, 0, 0)]);
        assert!(close(dialog_cost(&one).unwrap(), 0.335836, 1e-6));
        let two = history(&[act(0, 0, 0), act(1, 2, 2)]);
        assert!(close(dialog_cost(&two).unwrap(), 0.477680, 1e-6));

        let mut bad = history(&[act(0, 0, 0)]);
        bad.bubbles[0].content = 0.0;
        assert_eq!(dialog_cost(&bad).unwrap_err().code, ErrorCode::ZeroContent);
    }

    fn single_detection(r: f64) -> (AogGrammar, ParseGraph) {
        let g = AogGrammar::parse("node arm TERM arm\n").unwrap();
        let mut pg = ParseGraph::empty(&g);
        pg.insert_detection(
            NodeId(0),
            DetectionRecord {
                process: Process::Alpha,
                confidence: 0.9,
                region: Region::new(0.4, 0.6, r).unwrap(),
                correct: true,
            },
        );
        (g, pg)
    }

    #[test]
    fn region_examples() {
        let (_, pg) = single_detection(0.1);
        let r = bubble_region(NodeId(0), 1.15, &pg).unwrap();
        assert_eq!((r.cx, r.cy), (0.4, 0.6));
        assert!(close(r.r, 0.1, 1e-15));
        assert!(close(bubble_region(NodeId(0), 4.5, &pg).unwrap().r, 0.39130, 1e-5));
        let (_, pg) = single_detection(0.2);
        assert_eq!(bubble_region(NodeId(0), 4.5, &pg).unwrap().r, 0.5);
        assert_eq!(
            bubble_region(NodeId(1), 1.15, &pg).unwrap_err().code,
            ErrorCode::NotDetected
        );
    }

    #[test]
    fn enumerate_examples() {
        let (g, pg) = single_detection(0.1);
        let all: BTreeSet<NodeId> = g.node_ids().collect();
        assert_eq!(enumerate_actions(&g, &pg, &all, 0.5).unwrap().len(), 9);
        assert_eq!(
            enumerate_actions(&g, &ParseGraph::empty(&g), &all, 0.5)
                .unwrap_err()
                .code,
            ErrorCode::EmptyPg
        );
    }

    #[test]
    fn enumerate_two_nodes() {
        // `x` is bound from its child and sits under a detected `r`, so it
        // supports beta and gamma; terminal `a` has no detected parent.
        let g = AogGrammar::parse(
            "node top AND top\nnode r AND r\nnode x AND x\nnode t TERM t\nnode a TERM a\n\
             edge top r decomp\nedge top a decomp\nedge r x decomp\nedge x t decomp\n",
        )
        .unwrap();
        let det = |p| DetectionRecord {
            process: p,
            confidence: 0.9,
            region: Region::new(0.5, 0.5, 0.1).unwrap(),
            correct: true,
        };
        let mut pg = ParseGraph::empty(&g);
        for (name, p) in [("r", Process::Beta), ("x", Process::Beta), ("t", Process::Alpha), ("a", Process::Alpha)] {
            pg.insert_detection(g.lookup(name).unwrap(), det(p));
        }
        pg.close_edges(&g);
        let x = g.lookup("x").unwrap();
        let a = g.lookup("a").unwrap();
        assert_eq!(available_acts(&g, &pg, x, 0.5), vec![Process::Beta, Process::Gamma]);
        assert_eq!(available_acts(&g, &pg, a, 0.5), vec![Process::Alpha]);
        let relevant = BTreeSet::from([x, a]);
        assert_eq!(enumerate_actions(&g, &pg, &relevant, 0.5).unwrap().len(), 27);
    }

    #[test]
    fn action_index_roundtrip() {
        for i in 0..5 * ACTIONS_PER_NODE {
            assert_eq!(BubbleAction::from_index(i).index(), i);
        }
        let a = BubbleAction::from_sigmas(NodeId(2), Process::Gamma, 3.15, 15.0).unwrap();
        assert_eq!((a.space, a.scale), (1, 2));
        assert!(BubbleAction::from_sigmas(NodeId(2), Process::Gamma, 2.0, 15.0).is_none());
    }
}
