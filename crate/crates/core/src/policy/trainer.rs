//! Off-policy actor-critic over a replay pool of whole episodes.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{clip_gradient, Adam};
use super::lstm::{episode_loss, forward_step, masked_softmax, LossCoefs, LossParts, PolicyParams, RecurrentState, StepTarget};
use super::PolicyConfig;
use crate::error::{fail, ErrorCode, Result};

/// One replayed turn. The next state is the following experience of the
/// same episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub valid: Vec<u32>,
    pub action: u32,
    /// Probability the behaviour policy gave `action`; in (0, 1].
    pub behavior_prob: f64,
    pub reward: f64,
    pub terminal: bool,
    pub turn: u32,
}

pub type Episode = Vec<Experience>;

/// Bounded FIFO of episodes.
#[derive(Debug, Clone, Default)]
pub struct ReplayPool {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayPool {
    pub fn new(capacity: usize) -> Self {
        ReplayPool {
            capacity,
            episodes: VecDeque::new(),
        }
    }

    pub fn push(&mut self, episode: Episode) {
        if episode.is_empty() || self.capacity == 0 {
            return;
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    /// Mean discounted return of the sampled episodes.
    pub objective: f64,
    pub mean_advantage: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// L2 norm before clipping.
    pub grad_norm: f64,
    pub epsilon: f64,
}

/// Discounted return-to-go Q_t = sum_k gamma^k r_{t+k}.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// A_t = Q_t - V(s_t).
pub fn compute_advantages(rewards: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
    returns_to_go(rewards, gamma)
        .into_iter()
        .zip(values)
        .map(|(q, v)| q - v)
        .collect()
}

/// Value estimates and current probabilities of the taken actions.
pub fn evaluate_episode(params: &PolicyParams, episode: &Episode) -> (Vec<f64>, Vec<f64>) {
    let mut state = RecurrentState::zeros(params.dims.hidden);
    let mut values = Vec::with_capacity(episode.len());
    let mut probs = Vec::with_capacity(episode.len());
    for e in episode {
        let c = forward_step(params, &mut state, &e.state);
        values.push(c.value);
        probs.push(masked_softmax(&c.logits, &e.valid)[e.action as usize]);
    }
    (values, probs)
}

/// One Adam step on a batch drawn uniformly (with replacement) from the pool.
pub fn train_step(
    params: &mut PolicyParams,
    pool: &ReplayPool,
    adam: &mut Adam,
    config: &PolicyConfig,
    rng: &mut impl Rng,
) -> Result<TrainingMetrics> {
    if pool.len() < config.batch_episodes || config.batch_episodes == 0 {
        return fail(
            ErrorCode::PoolTooSmall,
            format!("pool holds {} episodes, batch needs {}", pool.len(), config.batch_episodes),
        );
    }
    let batch: Vec<&Episode> = (0..config.batch_episodes)
        .map(|_| &pool.episodes[rng.random_range(0..pool.len())])
        .collect();

    let mut adv = Vec::with_capacity(batch.len());
    let mut rets = Vec::with_capacity(batch.len());
    let mut rhos = Vec::with_capacity(batch.len());
    for ep in &batch {
        let rewards: Vec<f64> = ep.iter().map(|e| e.reward).collect();
        let (values, probs) = evaluate_episode(params, ep);
        adv.push(compute_advantages(&rewards, &values, config.gamma));
        rets.push(returns_to_go(&rewards, config.gamma));
        rhos.push(
            probs
                .iter()
                .zip(ep.iter())
                .map(|(p, e)| (p / e.behavior_prob).min(config.importance_clip))
                .collect::<Vec<f64>>(),
        );
    }
    let flat: Vec<f64> = adv.iter().flatten().copied().collect();
    let steps = flat.len();
    let mean = flat.iter().sum::<f64>() / steps as f64;
    let std = (flat.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / steps as f64).sqrt();
    // Advantages are rescaled, not centred: the value head is the baseline.
    let norm = if std > 1e-8 { 1.0 / std } else { 1.0 };

    let coefs = LossCoefs {
        value: config.value_coef,
        entropy: config.entropy_coef,
    };
    let scale = 1.0 / steps as f64;
    let snapshot: &PolicyParams = params;
    let per_episode: Vec<(Vec<f64>, LossParts)> = batch
        .par_iter()
        .enumerate()
        .map(|(k, ep)| {
            let inputs: Vec<Vec<f64>> = ep.iter().map(|e| e.state.clone()).collect();
            let targets: Vec<StepTarget> = ep
                .iter()
                .enumerate()
                .map(|(t, e)| StepTarget {
                    valid: e.valid.clone(),
                    action: e.action,
                    weight: rhos[k][t] * adv[k][t] * norm,
                    ret: rets[k][t],
                })
                .collect();
            let mut g = vec![0.0; snapshot.data.len()];
            let parts = episode_loss(snapshot, &inputs, &targets, coefs, scale, Some(&mut g));
            (g, parts)
        })
        .collect();
    // Summed in batch order so results do not depend on thread scheduling.
    let mut grad = vec![0.0; params.data.len()];
    let mut metrics = TrainingMetrics::default();
    for (k, (g, parts)) in per_episode.iter().enumerate() {
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
        metrics.value_loss += parts.value;
        metrics.entropy += parts.entropy;
        metrics.objective += rets[k][0] / batch.len() as f64;
    }
    metrics.mean_advantage = mean;
    metrics.grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !metrics.grad_norm.is_finite() {
        return fail(ErrorCode::NonfiniteGradient, "gradient has non-finite entries");
    }
    clip_gradient(&mut grad, config.grad_clip);
    adam.update(&mut params.data, &grad);
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::lstm::Dims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn advantage_examples() {
        assert_eq!(compute_advantages(&[2.5], &[0.0], 0.95), vec![2.5]);
        let a = compute_advantages(&[1.0, 1.0], &[0.0, 0.0], 0.9);
        assert!((a[0] - 1.9).abs() < 1e-15 && a[1] == 1.0);
        let r = [1.0, 0.5, 2.0];
        let q = returns_to_go(&r, 0.95);
        assert!(compute_advantages(&r, &q, 0.95).iter().all(|&x| x == 0.0));
    }

    fn toy_pool(dims: Dims, episodes: usize, rng: &mut ChaCha8Rng) -> ReplayPool {
        let mut pool = ReplayPool::new(100);
        for _ in 0..episodes {
            let len = rng.random_range(1..4);
            let ep = (0..len)
                .map(|t| Experience {
                    state: (0..dims.input).map(|_| rng.random_range(0..2) as f64).collect(),
                    valid: vec![0, 1, 3],
                    action: [0, 1, 3][rng.random_range(0..3)],
                    behavior_prob: 0.3,
                    reward: rng.random_range(0.0..2.0),
                    terminal: t + 1 == len,
                    turn: t as u32 + 1,
                })
                .collect();
            pool.push(ep);
        }
        pool
    }

    #[test]
    fn pool_fifo() {
        let mut pool = ReplayPool::new(2);
        let ep = |r: f64| {
            vec![Experience {
                state: vec![],
                valid: vec![0],
                action: 0,
                behavior_prob: 1.0,
                reward: r,
                terminal: true,
                turn: 1,
            }]
        };
        for r in [1.0, 2.0, 3.0] {
            pool.push(ep(r));
        }
        let kept: Vec<f64> = pool.episodes().map(|e| e[0].reward).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
    }

    #[test]
    fn step_requires_full_batch() {
        let dims = Dims { input: 4, hidden: 3, actions: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pool = toy_pool(dims, 3, &mut rng);
        let mut p = PolicyParams::init(dims, &mut rng);
        let mut adam = Adam::new(p.data.len(), 0.001);
        let cfg = PolicyConfig { batch_episodes: 4, ..Default::default() };
        let err = train_step(&mut p, &pool, &mut adam, &cfg, &mut rng).unwrap_err();
        assert_eq!(err.code, ErrorCode::PoolTooSmall);
    }

    #[test]
    fn zero_lr_and_determinism() {
        let dims = Dims { input: 4, hidden: 3, actions: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool = toy_pool(dims, 10, &mut rng);
        let p0 = PolicyParams::init(dims, &mut rng);
        let cfg = PolicyConfig { batch_episodes: 4, ..Default::default() };

        let mut p = p0.clone();
        let mut adam = Adam::new(p.data.len(), 0.0);
        let m = train_step(&mut p, &pool, &mut adam, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(p, p0);
        assert!(m.grad_norm.is_finite() && m.value_loss.is_finite());

        let run = || {
            let mut p = p0.clone();
            let mut adam = Adam::new(p.data.len(), 0.01);
            let mut r = ChaCha8Rng::seed_from_u64(11);
            let ms: Vec<TrainingMetrics> = (0..5)
                .map(|_| train_step(&mut p, &pool, &mut adam, &cfg, &mut r).unwrap())
                .collect();
            (p, ms)
        };
        assert_eq!(run(), run());
    }
}
