//! Held-out comparison of the full explainer against one trained without
//! belief features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::session::Selection;
use super::simulate::{game_specs, play_games, GameOutcome};
use super::{mix_seed, World};
use crate::error::{fail, ErrorCode, Result};
use crate::policy::Explainer;
use crate::simuser::UserProfile;

/// Seed offset that keeps held-out games apart from training games.
const HELD_OUT: u64 = 0x0004_E1D0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub games: u64,
    pub seed: u64,
    pub profile: UserProfile,
    pub tasks: Vec<String>,
    pub bootstrap: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            games: 200,
            seed: 0,
            profile: UserProfile::default(),
            tasks: vec!["action".to_owned()],
            bootstrap: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub trials: usize,
    /// Success rate in [0, 1].
    pub ss: f64,
    pub bubbles: f64,
    pub reward: f64,
}

impl AblationRow {
    pub fn from_outcomes(model: &str, outcomes: &[GameOutcome]) -> Self {
        let n = outcomes.len().max(1) as f64;
        AblationRow {
            model: model.to_owned(),
            trials: outcomes.len(),
            ss: outcomes.iter().filter(|o| o.success).count() as f64 / n,
            bubbles: outcomes.iter().map(|o| o.bubbles as f64).sum::<f64>() / n,
            reward: outcomes.iter().map(|o| o.mean_reward).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Bootstrap probability that the full model's mean reward is higher.
    pub reward_confidence: f64,
    pub full: Vec<GameOutcome>,
    pub ablated: Vec<GameOutcome>,
}

/// Greedy play of `explainer` on the held-out games of `config`.
pub fn evaluate(world: &World, explainer: &Explainer, config: &AblationConfig) -> Result<Vec<GameOutcome>> {
    let specs = game_specs(world, &config.tasks, config.games, mix_seed(config.seed, HELD_OUT))?;
    let sessions = play_games(world, explainer, &config.profile, &specs, |_| Selection::GREEDY)?;
    Ok(specs.iter().zip(&sessions).map(|(s, g)| GameOutcome::of(s, g)).collect())
}

/// Paired bootstrap: fraction of resamples in which mean(a - b) > 0.
pub fn bootstrap_confidence(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() || resamples == 0 {
        return 0.0;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    for _ in 0..resamples {
        let s: f64 = (0..diffs.len()).map(|_| diffs[rng.random_range(0..diffs.len())]).sum();
        if s > 0.0 {
            wins += 1;
        }
    }
    wins as f64 / resamples as f64
}

pub fn run_ablation(
    world: &World,
    full: &Explainer,
    ablated: &Explainer,
    config: &AblationConfig,
) -> Result<AblationReport> {
    if full.encoder != ablated.encoder {
        return fail(ErrorCode::CheckpointMismatch, "checkpoints were trained on different grammars");
    }
    let f = evaluate(world, full, config)?;
    let a = evaluate(world, ablated, config)?;
    let rf: Vec<f64> = f.iter().map(|o| o.mean_reward).collect();
    let ra: Vec<f64> = a.iter().map(|o| o.mean_reward).collect();
    Ok(AblationReport {
        rows: vec![AblationRow::from_outcomes("X-ToM", &f), AblationRow::from_outcomes("Ablated", &a)],
        reward_confidence: bootstrap_confidence(&rf, &ra, config.bootstrap, mix_seed(config.seed, 0xB007)),
        full: f,
        ablated: a,
    })
}

pub const ABLATION_HEADER: &str = "model\t#test trials\tss\t#bubbles\tr";

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{:.1}%\t{:.1}\t{:.2}\n",
            r.model,
            r.trials,
            100.0 * r.ss,
            r.bubbles,
            r.reward
        ));
    }
    s
}
