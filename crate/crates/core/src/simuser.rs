//! Simulated users: tasks, the question catalog, and a parameterised user
//! that asks questions, watches bubbles, attempts the task and answers the
//! phase-two prediction questions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aog::{AogGrammar, NodeId, Process};
use crate::bubble::{Bubble, DialogHistory, Discourse};
use crate::error::{fail, Error, ErrorCode, Result};
use crate::evaluator::{EvalKind, EvalQuestion};
use crate::performer::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    BodyPartId,
    PoseEstimation,
    ActionId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub kind: TaskKind,
    pub labels: Vec<String>,
    /// Nodes whose evidence decides the task.
    pub critical: Vec<NodeId>,
}

impl Task {
    pub fn is_critical(&self, v: NodeId) -> bool {
        self.critical.contains(&v)
    }
}

/// Parses `task <id> <KIND> <label|label...> <node,node...>` records.
pub fn parse_tasks(text: &str, grammar: &AogGrammar) -> Result<Vec<Task>> {
    let mut tasks: Vec<Task> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let schema = |msg: String| Error::new(ErrorCode::SchemaError, format!("line {lineno}: {msg}"));
        if tokens[0] != "task" || tokens.len() != 5 {
            return Err(schema("expected `task <id> <kind> <labels> <critical>`".into()));
        }
        let kind = match tokens[2] {
            "BODY_PART_ID" => TaskKind::BodyPartId,
            "POSE_ESTIMATION" => TaskKind::PoseEstimation,
            "ACTION_ID" => TaskKind::ActionId,
            other => return Err(schema(format!("unknown task kind `{other}`"))),
        };
        let labels: Vec<String> = tokens[3]
            .split('|')
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect();
        if labels.is_empty() {
            return Err(schema("empty label set".into()));
        }
        let mut critical = Vec::new();
        for name in tokens[4].split(',').filter(|s| !s.is_empty()) {
            let id = grammar.lookup(name).ok_or_else(|| {
                Error::new(
                    ErrorCode::GrammarMismatch,
                    format!("line {lineno}: unknown node `{name}`"),
                )
            })?;
            critical.push(id);
        }
        if critical.is_empty() {
            return Err(schema("task has no critical nodes".into()));
        }
        if tasks.iter().any(|t| t.id == tokens[1]) {
            return Err(schema(format!("duplicate task `{}`", tokens[1])));
        }
        tasks.push(Task {
            id: tokens[1].to_owned(),
            kind,
            labels,
            critical,
        });
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub subject: NodeId,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuestionCatalog {
    pub questions: Vec<Question>,
}

impl QuestionCatalog {
    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn for_subject(&self, v: NodeId) -> Option<&Question> {
        self.questions.iter().find(|q| q.subject == v)
    }

    pub fn subjects(&self) -> BTreeSet<NodeId> {
        self.questions.iter().map(|q| q.subject).collect()
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

pub fn question_id(grammar: &AogGrammar, v: NodeId) -> String {
    format!("q-{}", grammar.name(v))
}

/// One question per node reachable from the ancestry of a critical node.
/// Critical subjects come first, in task order, then the rest parents-first.
pub fn build_catalog(grammar: &AogGrammar, task: &Task) -> QuestionCatalog {
    let mut reachable = BTreeSet::new();
    for &c in &task.critical {
        for a in grammar.ancestors(c) {
            reachable.extend(grammar.descendants(a));
        }
    }
    let mut order: Vec<NodeId> = Vec::new();
    for &c in &task.critical {
        if !order.contains(&c) {
            order.push(c);
        }
    }
    for &v in grammar.topological() {
        if reachable.contains(&v) && !order.contains(&v) {
            order.push(v);
        }
    }
    let questions = order
        .into_iter()
        .map(|v| {
            let label = grammar.node(v).label.replace('_', " ");
            let text = if grammar.is_terminal(v) {
                format!("Where is the {label}?")
            } else {
                format!("What is the {label} doing?")
            };
            Question {
                id: question_id(grammar, v),
                text,
                subject: v,
            }
        })
        .collect();
    QuestionCatalog { questions }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curiosity {
    Breadth,
    Depth,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub curiosity: Curiosity,
    /// Fraction of critical nodes that must be revealed before the user
    /// answers from evidence rather than guessing.
    pub evidence_threshold: f64,
    pub accuracy_given_evidence: f64,
    /// Maximum number of turns the user sits through.
    pub patience: u32,
    /// A part counts as seen inside a bubble only when its radius is at
    /// least this fraction of the bubble's radius.
    pub focus_ratio: f64,
    pub seed: u64,
}

impl Default for UserProfile {
    fn default() -> Self {
        UserProfile {
            curiosity: Curiosity::Random,
            evidence_threshold: 0.8,
            accuracy_given_evidence: 0.95,
            patience: 30,
            focus_ratio: 0.25,
            seed: 0,
        }
    }
}

impl UserProfile {
    /// Parses `key = value` lines; unspecified keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = UserProfile::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| {
                Error::new(ErrorCode::ConfigError, format!("profile line {}: {msg}", lineno + 1))
            };
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || value.parse::<f64>().map_err(|_| bad("expected a number"));
            match key {
                "curiosity" => {
                    p.curiosity = match value {
                        "breadth" => Curiosity::Breadth,
                        "depth" => Curiosity::Depth,
                        "random" => Curiosity::Random,
                        _ => return Err(bad("curiosity must be breadth, depth or random")),
                    }
                }
                "evidence_threshold" => p.evidence_threshold = num()?,
                "accuracy_given_evidence" => p.accuracy_given_evidence = num()?,
                "patience" => p.patience = value.parse().map_err(|_| bad("expected an integer"))?,
                "focus_ratio" => p.focus_ratio = num()?,
                "seed" => p.seed = value.parse().map_err(|_| bad("expected an integer"))?,
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let curiosity = match self.curiosity {
            Curiosity::Breadth => "breadth",
            Curiosity::Depth => "depth",
            Curiosity::Random => "random",
        };
        writeln!(out, "curiosity = {curiosity}").unwrap();
        writeln!(out, "evidence_threshold = {}", self.evidence_threshold).unwrap();
        writeln!(out, "accuracy_given_evidence = {}", self.accuracy_given_evidence).unwrap();
        writeln!(out, "patience = {}", self.patience).unwrap();
        writeln!(out, "focus_ratio = {}", self.focus_ratio).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        out
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.evidence_threshold) || !unit(self.accuracy_given_evidence) || !unit(self.focus_ratio) {
            return fail(ErrorCode::ConfigError, "profile fractions must lie in [0,1]");
        }
        if self.patience < 1 {
            return fail(ErrorCode::ConfigError, "patience must be at least 1");
        }
        Ok(())
    }
}

/// Picks the user's next question among subjects not yet revealed.
pub fn next_question(
    profile: &UserProfile,
    catalog: &QuestionCatalog,
    grammar: &AogGrammar,
    task: &Task,
    revealed: &BTreeSet<NodeId>,
    history: &DialogHistory,
    rng: &mut impl Rng,
) -> Result<String> {
    let open: Vec<&Question> = catalog
        .questions
        .iter()
        .filter(|q| !revealed.contains(&q.subject))
        .collect();
    if open.is_empty() {
        return fail(ErrorCode::Exhausted, "every subject in the catalog is revealed");
    }
    let breadth = || {
        let critical: Vec<&&Question> = open.iter().filter(|q| task.is_critical(q.subject)).collect();
        let pool: Vec<&Question> = if critical.is_empty() {
            open.clone()
        } else {
            critical.into_iter().copied().collect()
        };
        // min_by_key keeps the first of equal keys, i.e. catalog order.
        pool.into_iter()
            .min_by_key(|q| grammar.depth(q.subject))
            .expect("non-empty")
            .id
            .clone()
    };
    let picked = match profile.curiosity {
        Curiosity::Breadth => breadth(),
        Curiosity::Depth => {
            let below: Option<&Question> = history.bubbles.last().and_then(|last| {
                let under = grammar.descendants(last.attention());
                let mut cands: Vec<&Question> = open
                    .iter()
                    .copied()
                    .filter(|q| q.subject != last.attention() && under.contains(&q.subject))
                    .collect();
                cands.sort_by_key(|q| (!task.is_critical(q.subject), grammar.depth(q.subject)));
                cands.first().copied()
            });
            match below {
                Some(q) => q.id.clone(),
                None => breadth(),
            }
        }
        Curiosity::Random => open[rng.random_range(0..open.len())].id.clone(),
    };
    Ok(picked)
}

fn critical_fraction(task: &Task, revealed: &BTreeSet<NodeId>) -> f64 {
    let hit = task.critical.iter().filter(|c| revealed.contains(c)).count();
    hit as f64 / task.critical.len() as f64
}

/// The user's answer and confidence (1-5).
pub fn attempt_task(
    profile: &UserProfile,
    task: &Task,
    truth: &str,
    revealed: &BTreeSet<NodeId>,
    rng: &mut impl Rng,
) -> (String, u8) {
    let fraction = critical_fraction(task, revealed);
    if fraction >= profile.evidence_threshold {
        let cf = 1 + (4.0 * fraction).round() as u8;
        let correct = rng.random::<f64>() < profile.accuracy_given_evidence;
        let wrong: Vec<&String> = task.labels.iter().filter(|l| *l != truth).collect();
        let answer = if correct || wrong.is_empty() {
            truth.to_owned()
        } else {
            wrong[rng.random_range(0..wrong.len())].clone()
        };
        (answer, cf)
    } else {
        let answer = task.labels[rng.random_range(0..task.labels.len())].clone();
        let cf = rng.random_range(1..=2u8);
        (answer, cf)
    }
}

/// Satisfaction (1-5) from bubble relevance and ordering.
pub fn rate_satisfaction(task: &Task, history: &DialogHistory) -> u8 {
    let turns = history.len();
    if turns == 0 {
        return 1;
    }
    let relevant = history
        .bubbles
        .iter()
        .filter(|b| task.is_critical(b.attention()))
        .count() as f64
        / turns as f64;
    let repeats = history
        .bubbles
        .iter()
        .filter(|b| matches!(b.discourse, Discourse::Recurrence | Discourse::Restatement))
        .count() as f64;
    let coherence = 1.0 - repeats / turns as f64;
    1 + (4.0 * relevant * coherence).round() as u8
}

/// Parts a user actually makes out inside a bubble: the bubble must unblur
/// strongly, contain the part's true centre, and be focused enough.
pub fn visible_parts(bubble: &Bubble, scene: &Scene, focus_ratio: f64) -> Vec<NodeId> {
    if bubble.sigma2() < 9.0 {
        return Vec::new();
    }
    scene
        .parts
        .iter()
        .filter(|(_, truth)| {
            bubble.region.contains_point(truth.cx, truth.cy)
                && truth.r + 1e-12 >= focus_ratio * bubble.region.r
        })
        .map(|(v, _)| *v)
        .collect()
}

/// Per-episode state of a simulated user.
#[derive(Debug, Clone)]
pub struct SimulatedUser {
    pub profile: UserProfile,
    rng: ChaCha8Rng,
    revealed: BTreeSet<NodeId>,
    /// Attention nodes the user saw clearly, with the act shown and whether
    /// the true part fell inside the bubble.
    judged: BTreeMap<NodeId, (Process, bool)>,
}

impl SimulatedUser {
    pub fn new(profile: UserProfile, seed: u64) -> Self {
        SimulatedUser {
            profile,
            rng: ChaCha8Rng::seed_from_u64(profile.seed ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            revealed: BTreeSet::new(),
            judged: BTreeMap::new(),
        }
    }

    pub fn revealed(&self) -> &BTreeSet<NodeId> {
        &self.revealed
    }

    pub fn ask(
        &mut self,
        catalog: &QuestionCatalog,
        grammar: &AogGrammar,
        task: &Task,
        history: &DialogHistory,
    ) -> Result<String> {
        next_question(&self.profile, catalog, grammar, task, &self.revealed, history, &mut self.rng)
    }

    pub fn observe(&mut self, bubble: &Bubble, scene: &Scene) {
        self.revealed
            .extend(visible_parts(bubble, scene, self.profile.focus_ratio));
        if bubble.sigma2() >= 9.0 {
            if let Some(truth) = scene.parts.get(&bubble.attention()) {
                let hit = bubble.region.contains_point(truth.cx, truth.cy);
                self.judged.insert(bubble.attention(), (bubble.act(), hit));
            }
        }
    }

    pub fn attempt(&mut self, task: &Task, truth: &str) -> (String, u8) {
        attempt_task(&self.profile, task, truth, &self.revealed, &mut self.rng)
    }

    pub fn satisfaction(&self, task: &Task, history: &DialogHistory) -> u8 {
        rate_satisfaction(task, history)
    }

    /// Answers phase-two questions from what the user saw. Judged nodes are
    /// answered from the observation, incidentally revealed nodes lean
    /// optimistic, and unseen nodes are coin flips.
    pub fn answer_phase2(&mut self, questions: &[EvalQuestion]) -> Vec<(String, String)> {
        let mut answers = Vec::with_capacity(questions.len());
        for q in questions {
            match q.kind {
                EvalKind::DetectSuccess => {
                    let yes = match self.judged.get(&q.subject) {
                        Some(&(_, hit)) => hit,
                        None if self.revealed.contains(&q.subject) => self.rng.random::<f64>() < 0.7,
                        None => self.rng.random::<f64>() < 0.5,
                    };
                    answers.push((q.id.clone(), if yes { "yes" } else { "no" }.to_owned()));
                }
                EvalKind::Influence => {
                    if q.choices.is_empty() {
                        continue;
                    }
                    let choice = match self.judged.get(&q.subject) {
                        Some(&(act, _)) if act == q.process => q.choices[0].clone(),
                        _ => q.choices[self.rng.random_range(0..q.choices.len())].clone(),
                    };
                    answers.push((q.id.clone(), choice));
                }
            }
        }
        answers
    }
}
