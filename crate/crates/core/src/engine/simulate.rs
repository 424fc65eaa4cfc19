//! Games played end to end by the simulated user.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::session::{GameSession, Mode, Phase, Selection};
use super::{mix_seed, World};
use crate::error::{fail, ErrorCode, Result};
use crate::policy::Explainer;
use crate::simuser::{SimulatedUser, UserProfile};

/// Which scene and task a game uses, and its seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameSpec {
    pub index: u64,
    pub scene: String,
    pub task: String,
    pub seed: u64,
}

impl GameSpec {
    pub fn session_id(&self) -> String {
        format!("sim-{:05}", self.index)
    }
}

/// `count` games with scenes and tasks drawn from the run seed. Game k uses
/// seed mix(run_seed, k).
pub fn game_specs(world: &World, tasks: &[String], count: u64, run_seed: u64) -> Result<Vec<GameSpec>> {
    if world.scenes.is_empty() {
        return fail(ErrorCode::ConfigError, "no scenes to play");
    }
    if tasks.is_empty() {
        return fail(ErrorCode::ConfigError, "no tasks to play");
    }
    for t in tasks {
        world.task(t).map_err(|e| crate::Error::new(ErrorCode::ConfigError, e.message))?;
    }
    Ok((0..count)
        .map(|k| {
            let seed = mix_seed(run_seed, k);
            let pick = mix_seed(seed, 1);
            GameSpec {
                index: k,
                scene: world.scenes[(pick % world.scenes.len() as u64) as usize].id.clone(),
                task: tasks[((pick >> 32) % tasks.len() as u64) as usize].clone(),
                seed,
            }
        })
        .collect())
}

/// Plays both phases with a simulated user. Phase one ends at the first
/// success, when the user's patience runs out, when the user has nothing
/// left to ask, or when no bubble can be shown.
pub fn play_game(
    world: &World,
    explainer: &Explainer,
    profile: &UserProfile,
    spec: &GameSpec,
    selection: Selection,
) -> Result<GameSession> {
    let mut session = GameSession::create(
        world,
        explainer,
        spec.session_id(),
        &spec.scene,
        &spec.task,
        Mode::Simulated,
        spec.seed,
        selection,
    )?;
    let task = world.task(&spec.task)?;
    let catalog = world.catalog(&spec.task)?;
    let scene = world.scene(&spec.scene)?;
    let truth = scene.label_for(&spec.task);
    let mut user = SimulatedUser::new(*profile, spec.seed);
    while session.phase == Phase::Phase1 {
        if session.attempts >= profile.patience || session.turn >= world.game.turn_limit {
            session.end_phase1()?;
            break;
        }
        let question = match user.ask(catalog, &world.grammar, task, &session.history) {
            Ok(q) => q,
            Err(e) if e.code == ErrorCode::Exhausted => {
                session.end_phase1()?;
                break;
            }
            Err(e) => return Err(e),
        };
        let bubble = match session.ask(world, explainer, &question, None) {
            Ok(b) => b,
            Err(e) if e.code == ErrorCode::NoValidAction => {
                session.end_phase1()?;
                break;
            }
            Err(e) => return Err(e),
        };
        user.observe(&bubble, scene);
        let (answer, cf) = user.attempt(task, truth);
        let sf = user.satisfaction(task, &session.history);
        session.submit_attempt(world, &answer, cf, sf, None)?;
    }
    let questions = session.phase2_questions(world)?;
    let answers = user.answer_phase2(&questions);
    session.run_phase2(world, &answers, None)?;
    Ok(session)
}

/// Per-game numbers for the comparison tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub index: u64,
    pub success: bool,
    pub bubbles: u32,
    pub mean_reward: f64,
}

impl GameOutcome {
    pub fn of(spec: &GameSpec, session: &GameSession) -> Self {
        GameOutcome {
            index: spec.index,
            success: session.succeeded(),
            bubbles: session.turn,
            mean_reward: session.mean_reward(),
        }
    }
}

/// Plays every spec in parallel; results come back in spec order.
pub fn play_games(
    world: &World,
    explainer: &Explainer,
    profile: &UserProfile,
    specs: &[GameSpec],
    selection: impl Fn(&GameSpec) -> Selection + Sync,
) -> Result<Vec<GameSession>> {
    specs
        .par_iter()
        .map(|s| play_game(world, explainer, profile, s, selection(s)))
        .collect()
}
