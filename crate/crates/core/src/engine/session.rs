use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transcript::{Answer, BubbleWire, Event, GameTranscript};
use super::World;
use crate::aog::ParseGraph;
use crate::belief::{init_belief, update_belief, BeliefState};
use crate::bubble::{dialog_cost, Bubble, DialogHistory};
use crate::error::{fail, ErrorCode, Result};
use crate::evaluator::{
    assemble_minu, generate_eval_questions, resolve_answers, trust_report, EvalQuestion, MinUEstimate,
    SatisfactionSurvey, TrustReport,
};
use crate::performer::{NoiseConfig, Performer};
use crate::policy::lstm::forward_step;
use crate::policy::trainer::{Episode, Experience};
use crate::policy::{
    action_distribution, action_mask, decode_action, encode_state, reward, select_action, Encoder, Explainer,
    FeedbackRecord, RecurrentState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Phase1,
    Phase2,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Human,
    Simulated,
}

/// How the explainer picks among valid bubbles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub epsilon: f64,
    /// Argmax instead of sampling from the policy.
    pub greedy: bool,
}

impl Selection {
    pub const GREEDY: Selection = Selection {
        epsilon: 0.0,
        greedy: true,
    };

    pub fn training(epsilon: f64) -> Self {
        Selection { epsilon, greedy: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptOutcome {
    pub ss: i8,
    pub reward: f64,
    /// Phase one ended with this attempt.
    pub phase_changed: bool,
}

fn now_ms(mode: Mode) -> Option<u64> {
    match mode {
        Mode::Human => SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_millis() as u64),
        Mode::Simulated => None,
    }
}

#[derive(Debug, Clone)]
pub struct GameSession {
    pub id: String,
    pub phase: Phase,
    pub scene_id: String,
    pub task_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub selection: Selection,
    pub history: DialogHistory,
    pub belief: BeliefState,
    pub pg_m: ParseGraph,
    pub feedback: Vec<FeedbackRecord>,
    pub rewards: Vec<f64>,
    pub turn: u32,
    pub attempts: u32,
    last_attempt_turn: Option<u32>,
    rnn: RecurrentState,
    rng: ChaCha8Rng,
    /// Replay steps, recorded in simulated mode only.
    pub episode: Episode,
    pub transcript: GameTranscript,
    pub report: Option<TrustReport>,
    pub minu: Option<MinUEstimate>,
    pub survey: Option<SatisfactionSurvey>,
}

impl GameSession {
    /// Starts phase one: the performer interprets the scene with noise
    /// seeded by `seed`, and the belief starts empty.
    #[allow(clippy::too_many_arguments)]
    pub fn create(
        world: &World,
        explainer: &Explainer,
        id: impl Into<String>,
        scene_id: &str,
        task_id: &str,
        mode: Mode,
        seed: u64,
        selection: Selection,
    ) -> Result<Self> {
        let scene = world.scene(scene_id)?;
        let task = world.task(task_id)?;
        if !task.labels.iter().any(|l| l == scene.label_for(task_id)) {
            return fail(
                ErrorCode::UnknownTask,
                format!("scene `{scene_id}` has no ground truth for task `{task_id}`"),
            );
        }
        if explainer.encoder != Encoder::new(&world.grammar) {
            return fail(ErrorCode::GrammarMismatch, "explainer was built for another grammar");
        }
        let noise = NoiseConfig { seed, ..world.noise };
        let pg_m = Performer::new(world.performer).interpret(scene, &world.grammar, &noise)?;
        let id = id.into();
        let mut transcript = GameTranscript::default();
        transcript.push(Event::Created {
            session: id.clone(),
            scene: scene_id.to_owned(),
            task: task_id.to_owned(),
            mode,
            seed,
            selection,
            grammar: world.grammar.hash().to_hex(),
            at_ms: now_ms(mode),
        });
        Ok(GameSession {
            id,
            phase: Phase::Phase1,
            scene_id: scene_id.to_owned(),
            task_id: task_id.to_owned(),
            mode,
            seed,
            selection,
            history: DialogHistory::default(),
            belief: init_belief(&world.grammar),
            pg_m,
            feedback: Vec::new(),
            rewards: Vec::new(),
            turn: 0,
            attempts: 0,
            last_attempt_turn: None,
            rnn: RecurrentState::zeros(explainer.params.dims.hidden),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x0005_EED0_FB0B_B1E5),
            episode: Vec::new(),
            transcript,
            report: None,
            minu: None,
            survey: None,
        })
    }

    fn require(&self, phase: Phase) -> Result<()> {
        if self.phase != phase {
            return fail(
                ErrorCode::WrongPhase,
                format!("session is in {:?}, operation needs {:?}", self.phase, phase),
            );
        }
        Ok(())
    }

    /// Answers a question with the explainer's next bubble.
    pub fn ask(
        &mut self,
        world: &World,
        explainer: &Explainer,
        question_id: &str,
        response_ms: Option<u64>,
    ) -> Result<Bubble> {
        self.require(Phase::Phase1)?;
        let catalog = world.catalog(&self.task_id)?;
        let question = catalog
            .get(question_id)
            .ok_or_else(|| crate::Error::new(ErrorCode::UnknownQuestion, format!("no question `{question_id}`")))?;
        if self.turn >= world.game.turn_limit {
            return fail(ErrorCode::TurnLimit, format!("turn limit {} reached", world.game.turn_limit));
        }
        let g = &world.grammar;
        let belief = update_belief(
            &self.belief,
            question_id,
            &self.history,
            &world.tables,
            g,
            &self.pg_m,
            &world.belief,
        );
        let valid = if self.pg_m.is_empty() {
            Vec::new()
        } else {
            action_mask(
                g,
                &self.pg_m,
                &world.relevant_nodes(&self.task_id, explainer.config.scope)?,
                &self.history,
                world.performer.binding_threshold,
                explainer.config.forbid_recurrence,
            )?
        };
        let state = encode_state(
            &explainer.encoder,
            &self.pg_m,
            &belief,
            Some(question.subject),
            &self.history,
            g,
            world.belief.threshold,
            explainer.ablated,
        )?;
        let mut rnn = self.rnn.clone();
        let step = forward_step(&explainer.params, &mut rnn, &state);
        let dist = action_distribution(&step.logits, &valid)?;
        let (action, behavior_prob) =
            select_action(&dist, &valid, self.selection.epsilon, self.selection.greedy, &mut self.rng);
        let bubble = Bubble::realize(decode_action(action), &self.history, &self.pg_m)?;

        self.belief = belief;
        self.rnn = rnn;
        self.history.push(question_id.to_owned(), bubble);
        self.turn += 1;
        if self.mode == Mode::Simulated {
            self.episode.push(Experience {
                state,
                valid,
                action,
                behavior_prob,
                reward: 0.0,
                terminal: false,
                turn: self.turn,
            });
        }
        self.rewards.push(0.0);
        self.transcript.push(Event::Ask {
            turn: self.turn,
            question: question_id.to_owned(),
            bubble: BubbleWire::new(&bubble, g),
            response_ms,
            at_ms: now_ms(self.mode),
        });
        Ok(bubble)
    }

    /// The user's answer to the task after the latest bubble.
    pub fn submit_attempt(
        &mut self,
        world: &World,
        answer: &str,
        cf: u8,
        sf: u8,
        response_ms: Option<u64>,
    ) -> Result<AttemptOutcome> {
        self.require(Phase::Phase1)?;
        if self.turn == 0 {
            return fail(ErrorCode::NoBubblesYet, "ask a question before attempting the task");
        }
        if self.last_attempt_turn == Some(self.turn) {
            return fail(ErrorCode::AlreadyAttempted, format!("turn {} already has an attempt", self.turn));
        }
        let truth = world.scene(&self.scene_id)?.label_for(&self.task_id);
        let ss = if answer == truth { 1 } else { -1 };
        let feedback = FeedbackRecord { ss, cf, sf };
        let r = reward(&feedback, dialog_cost(&self.history)?, self.turn)?;

        self.last_attempt_turn = Some(self.turn);
        self.attempts += 1;
        self.feedback.push(feedback);
        *self.rewards.last_mut().expect("a bubble was shown") = r;
        let done = ss == 1 || self.attempts >= world.game.patience || self.turn >= world.game.turn_limit;
        if let Some(last) = self.episode.last_mut() {
            last.reward = r;
            last.terminal = done;
        }
        if done {
            self.phase = Phase::Phase2;
        }
        self.transcript.push(Event::Attempt {
            turn: self.turn,
            answer: answer.to_owned(),
            cf,
            sf,
            ss,
            reward: r,
            phase: self.phase,
            response_ms,
            at_ms: now_ms(self.mode),
        });
        Ok(AttemptOutcome {
            ss,
            reward: r,
            phase_changed: done,
        })
    }

    /// The user stops asking; phase one ends without success.
    pub fn end_phase1(&mut self) -> Result<()> {
        self.require(Phase::Phase1)?;
        self.phase = Phase::Phase2;
        if let Some(last) = self.episode.last_mut() {
            last.terminal = true;
        }
        self.transcript.push(Event::EndPhase1 { turn: self.turn });
        Ok(())
    }

    pub fn phase2_questions(&self, world: &World) -> Result<Vec<EvalQuestion>> {
        self.require(Phase::Phase2)?;
        if self.pg_m.is_empty() {
            return Ok(Vec::new());
        }
        generate_eval_questions(&self.pg_m, &world.grammar)
    }

    /// Scores the user's predictions of the machine against pg^M.
    pub fn run_phase2(
        &mut self,
        world: &World,
        answers: &[(String, String)],
        survey: Option<SatisfactionSurvey>,
    ) -> Result<TrustReport> {
        self.require(Phase::Phase2)?;
        let questions = self.phase2_questions(world)?;
        let resolved = resolve_answers(&questions, answers)?;
        let minu = assemble_minu(&world.grammar, &resolved)?;
        if let Some(s) = &survey {
            crate::evaluator::collect_satisfaction(&self.id, *s)?;
        }
        let mut report = trust_report(&world.grammar, &[(minu.clone(), self.pg_m.clone())])?;
        report.es = survey.map(|s| s.ratings().map(f64::from));
        self.phase = Phase::Done;
        self.transcript.push(Event::Phase2 {
            answers: answers
                .iter()
                .map(|(q, c)| Answer {
                    question: q.clone(),
                    choice: c.clone(),
                })
                .collect(),
            report: report.clone(),
            survey,
            at_ms: now_ms(self.mode),
        });
        self.minu = Some(minu);
        self.survey = survey;
        self.report = Some(report.clone());
        Ok(report)
    }

    /// Mean per-turn reward of phase one.
    pub fn mean_reward(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
        }
    }

    pub fn succeeded(&self) -> bool {
        self.feedback.iter().any(|f| f.ss == 1)
    }

    /// Re-runs a transcript's events through a fresh session and checks every
    /// recorded bubble and outcome is reproduced.
    pub fn replay(world: &World, explainer: &Explainer, transcript: &GameTranscript) -> Result<GameSession> {
        let mismatch = |what: &str| crate::Error::new(ErrorCode::SchemaError, format!("replay diverged at {what}"));
        let mut events = transcript.events.iter();
        let Some(Event::Created {
            session,
            scene,
            task,
            mode,
            seed,
            selection,
            ..
        }) = events.next()
        else {
            return fail(ErrorCode::SchemaError, "transcript does not start with a created event");
        };
        let mut s = GameSession::create(world, explainer, session.clone(), scene, task, *mode, *seed, *selection)?;
        for e in events {
            match e {
                Event::Created { .. } => return Err(mismatch("a second created event")),
                Event::Ask {
                    question,
                    bubble,
                    response_ms,
                    ..
                } => {
                    let b = s.ask(world, explainer, question, *response_ms)?;
                    if BubbleWire::new(&b, &world.grammar) != *bubble {
                        return Err(mismatch(&format!("turn {}", s.turn)));
                    }
                }
                Event::Attempt {
                    answer,
                    cf,
                    sf,
                    ss,
                    reward,
                    response_ms,
                    ..
                } => {
                    let out = s.submit_attempt(world, answer, *cf, *sf, *response_ms)?;
                    if out.ss != *ss || out.reward != *reward {
                        return Err(mismatch(&format!("attempt at turn {}", s.turn)));
                    }
                }
                Event::EndPhase1 { .. } => s.end_phase1()?,
                Event::Phase2 { answers, survey, .. } => {
                    let pairs: Vec<(String, String)> =
                        answers.iter().map(|a| (a.question.clone(), a.choice.clone())).collect();
                    s.run_phase2(world, &pairs, *survey)?;
                }
            }
        }
        Ok(s)
    }
}
