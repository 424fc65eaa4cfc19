//! Simulated training: episodes are played against a frozen snapshot of the
//! weights, and after every round the trainer takes several Adam steps on
//! the replay pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::session::Selection;
use super::simulate::{game_specs, play_games, GameOutcome};
use super::{mix_seed, World};
use crate::error::{fail, ErrorCode, Result};
use crate::policy::adam::Adam;
use crate::policy::trainer::{train_step, ReplayPool, TrainingMetrics};
use crate::policy::{anneal_epsilon, Explainer, PolicyConfig};
use crate::simuser::UserProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub episodes: u64,
    /// Episodes between update rounds.
    pub round: u64,
    /// Adam steps per update round.
    pub updates_per_round: usize,
    pub seed: u64,
    pub ablated: bool,
    pub policy: PolicyConfig,
    pub profile: UserProfile,
    pub tasks: Vec<String>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            episodes: 3500,
            round: 200,
            updates_per_round: 800,
            seed: 0,
            ablated: false,
            policy: PolicyConfig::default(),
            profile: UserProfile::default(),
            tasks: vec!["action".to_owned()],
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.round == 0 {
            return fail(ErrorCode::ConfigError, "round length must be positive");
        }
        if self.policy.batch_episodes as u64 > self.round || self.policy.batch_episodes == 0 {
            return fail(ErrorCode::ConfigError, "batch size must be in 1..=round");
        }
        if self.policy.hidden == 0 {
            return fail(ErrorCode::ConfigError, "hidden size must be positive");
        }
        self.profile
            .validate()
            .map_err(|e| crate::Error::new(ErrorCode::ConfigError, e.message))
    }
}

/// One line of the metrics series: the episodes of a round and, when the
/// round was complete, the mean training metrics of its updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub episodes: u64,
    pub epsilon: f64,
    pub success_rate: f64,
    pub mean_bubbles: f64,
    pub mean_reward: f64,
    pub updates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub explainer: Explainer,
    pub rounds: Vec<RoundMetrics>,
}

pub fn run_training(
    world: &World,
    config: &TrainingConfig,
    mut on_round: impl FnMut(&RoundMetrics),
) -> Result<TrainingRun> {
    config.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, u64::MAX));
    let mut explainer = Explainer::new(&world.grammar, config.policy, config.ablated, &mut init_rng);
    let specs = game_specs(world, &config.tasks, config.episodes, config.seed)?;
    let mut pool = ReplayPool::new(config.policy.pool_capacity);
    let mut adam = Adam::new(explainer.params.data.len(), config.policy.learning_rate);
    let mut rounds = Vec::new();
    for (k, chunk) in specs.chunks(config.round as usize).enumerate() {
        let snapshot = explainer.clone();
        let total = config.episodes;
        let sessions = play_games(world, &snapshot, &config.profile, chunk, |s| {
            Selection::training(anneal_epsilon(s.index, total))
        })?;
        let outcomes: Vec<GameOutcome> = chunk.iter().zip(&sessions).map(|(s, g)| GameOutcome::of(s, g)).collect();
        for s in sessions {
            pool.push(s.episode);
        }
        let mut metrics = RoundMetrics {
            round: k as u64 + 1,
            episodes: chunk.last().map(|s| s.index + 1).unwrap_or(0),
            epsilon: anneal_epsilon(chunk[0].index, total),
            success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / outcomes.len() as f64,
            mean_bubbles: outcomes.iter().map(|o| o.bubbles as f64).sum::<f64>() / outcomes.len() as f64,
            mean_reward: outcomes.iter().map(|o| o.mean_reward).sum::<f64>() / outcomes.len() as f64,
            updates: 0,
            training: None,
        };
        if chunk.len() as u64 == config.round && pool.len() >= config.policy.batch_episodes {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed ^ 0x7EA1_4E55, k as u64));
            let mut sum = TrainingMetrics::default();
            for _ in 0..config.updates_per_round {
                let m = train_step(&mut explainer.params, &pool, &mut adam, &config.policy, &mut rng)?;
                sum.objective += m.objective;
                sum.mean_advantage += m.mean_advantage;
                sum.value_loss += m.value_loss;
                sum.entropy += m.entropy;
                sum.grad_norm += m.grad_norm;
            }
            let n = config.updates_per_round.max(1) as f64;
            sum.objective /= n;
            sum.mean_advantage /= n;
            sum.value_loss /= n;
            sum.entropy /= n;
            sum.grad_norm /= n;
            sum.epsilon = metrics.epsilon;
            metrics.updates = config.updates_per_round;
            metrics.training = Some(sum);
        }
        on_round(&metrics);
        rounds.push(metrics);
    }
    Ok(TrainingRun { explainer, rounds })
}

/// Update rounds that actually trained.
pub fn update_rounds(rounds: &[RoundMetrics]) -> usize {
    rounds.iter().filter(|r| r.training.is_some()).count()
}
