//! Expert demonstrations by self-play against a ground-truth constraint:
//! train a constrained policy, then keep its best constraint-satisfying
//! rollouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use super::{EnvError, NavEnv, NavTask, EnvSpec};
use crate::crl::{rollout, train_policy, ActionMode, CrlConfig, LagrangianPolicy, Trajectory};
use crate::tl::{robustness, Formula};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Demonstrations wanted.
    pub n: usize,
    /// Reward quantile of the rollout pool a demonstration must reach.
    pub quantile: f64,
    /// Rollouts drawn to estimate the reward quantile.
    pub pool_size: usize,
    /// Cap on further rollouts while collecting demonstrations.
    pub max_attempts: usize,
    /// Scripted constraint-satisfying rollouts seeding the replay buffer.
    pub scripted_warm_start: usize,
    pub seed: u64,
    pub crl: CrlConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            n: 20,
            quantile: 0.6,
            pool_size: 200,
            max_attempts: 2_000,
            scripted_warm_start: 20,
            seed: 0,
            crl: CrlConfig::default(),
        }
    }
}

/// Demonstrations plus the evidence needed to audit their selection.
#[derive(Debug, Clone)]
pub struct DemoSet {
    pub demos: Vec<Trajectory>,
    /// Total rewards of the pool used for the quantile.
    pub pool_rewards: Vec<f64>,
    pub reward_threshold: f64,
    /// Rollouts drawn after the pool.
    pub attempts: usize,
    /// True when fewer than `n` demonstrations were found.
    pub partial: bool,
    pub policy: LagrangianPolicy,
}

fn crl(e: crate::crl::CrlError) -> EnvError {
    EnvError::Crl(e.to_string())
}

/// Trains a constrained policy under `gt` on `spec`, then keeps rollouts with
/// ρ > 0 whose total reward reaches the configured quantile of a fresh pool
/// of the policy's rollouts. The replay buffer starts from scripted
/// rollouts of `task`'s expert style that satisfy `gt`.
pub fn gen_expert_demos(spec: &EnvSpec, gt: &Formula, task: NavTask, cfg: &DemoConfig) -> Result<DemoSet, EnvError> {
    if !(0.0..=1.0).contains(&cfg.quantile) || cfg.pool_size == 0 {
        return Err(EnvError::InvalidSpec("quantile must lie in [0, 1] and pool_size be positive".into()));
    }
    let mut env = NavEnv::new(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut warm = Vec::with_capacity(cfg.scripted_warm_start);
    let mut tries = 0;
    while warm.len() < cfg.scripted_warm_start && tries < 50 * cfg.scripted_warm_start.max(1) {
        tries += 1;
        let noise = rng.random_range(0.05..0.3);
        let t = task.expert_style(noise).rollout(&mut env, &mut rng);
        if robustness(&t.trace().map_err(crl)?, gt, 0)? > 0.0 {
            warm.push(t);
        }
    }
    let crl_cfg = CrlConfig { seed: cfg.crl.seed ^ cfg.seed, ..cfg.crl.clone() };
    let (policy, _) = train_policy(&mut env, gt, &warm, &crl_cfg).map_err(crl)?;

    let hash = spec.hash();
    let mut demos = Vec::with_capacity(cfg.n);
    let accept = |mut t: Trajectory, threshold: f64, demos: &mut Vec<Trajectory>| {
        let rho = t.rho.expect("rollouts carry robustness");
        if demos.len() < cfg.n && rho > 0.0 && t.total_reward() >= threshold {
            t.meta.insert("source".into(), "crl-expert".into());
            t.meta.insert("spec_hash".into(), hash.clone());
            t.meta.insert("task".into(), task.name().into());
            demos.push(t);
        }
    };
    let mut pool = Vec::with_capacity(cfg.pool_size);
    for _ in 0..cfg.pool_size {
        pool.push(rollout(&policy, &mut env, ActionMode::Stochastic, &mut rng).map_err(crl)?);
    }
    let pool_rewards: Vec<f64> = pool.iter().map(Trajectory::total_reward).collect();
    let reward_threshold = Data::new(pool_rewards.clone()).quantile(cfg.quantile);
    for t in pool {
        accept(t, reward_threshold, &mut demos);
    }
    let mut attempts = 0;
    while demos.len() < cfg.n && attempts < cfg.max_attempts {
        attempts += 1;
        let t = rollout(&policy, &mut env, ActionMode::Stochastic, &mut rng).map_err(crl)?;
        accept(t, reward_threshold, &mut demos);
    }
    let partial = demos.len() < cfg.n;
    if partial {
        log::warn!("collected {} of {} demonstrations after {} extra rollouts", demos.len(), cfg.n, attempts);
    }
    Ok(DemoSet { demos, pool_rewards, reward_threshold, attempts, partial, policy })
}
