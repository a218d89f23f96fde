use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::CrlError;
use crate::automaton::{to_dfa, Dfa};
use crate::nn::{Adam, Mlp};
use crate::tl::Formula;

pub(crate) const LOG_STD_MIN: f32 = -5.0;
pub(crate) const LOG_STD_MAX: f32 = 2.0;
const SQUASH_EPS: f32 = 1e-6;
const HALF_LOG_2PI: f32 = 0.918_938_5;

/// Squashed-Gaussian actor with twin reward and cost critics, acting on
/// the normalized environment state concatenated with a one-hot encoding
/// of the constraint automaton's state.
#[derive(Debug, Clone)]
pub struct LagrangianPolicy {
    pub constraint: Formula,
    pub(crate) dfa: Dfa,
    pub(crate) state_dim: usize,
    pub(crate) action_dim: usize,
    pub(crate) action_bound: f64,
    pub(crate) obs_mean: Vec<f32>,
    pub(crate) obs_std: Vec<f32>,
    pub(crate) actor: Mlp,
    /// Reward critics, then their targets.
    pub(crate) q_r: [Mlp; 2],
    pub(crate) q_r_targ: [Mlp; 2],
    /// Cost critics, then their targets.
    pub(crate) q_c: [Mlp; 2],
    pub(crate) q_c_targ: [Mlp; 2],
    pub log_alpha: f64,
    pub lambda: f64,
}

/// One minibatch with normalized observations and actions in (−1, 1).
pub(crate) struct Batch {
    pub obs: Array2<f32>,
    pub act: Array2<f32>,
    pub reward: Vec<f32>,
    pub cost: Vec<f32>,
    pub next_obs: Array2<f32>,
}

/// Diagnostics from one gradient update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
}

pub(crate) struct Optimizers {
    actor: Adam,
    q_r: [Adam; 2],
    q_c: [Adam; 2],
    log_alpha: Adam,
}

struct ActorSample {
    tape: crate::nn::Tape,
    eps: Array2<f32>,
    y: Array2<f32>,
    sigma: Array2<f32>,
    clamped: Array2<bool>,
    logp: Vec<f32>,
}

impl LagrangianPolicy {
    pub fn new<R: Rng + ?Sized>(
        constraint: &Formula,
        state_dim: usize,
        action_dim: usize,
        action_bound: f64,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self, CrlError> {
        if let Some(d) = constraint.max_dim() {
            if d >= state_dim {
                return Err(CrlError::DimensionMismatch { env: state_dim, formula: d + 1 });
            }
        }
        let dfa = to_dfa(constraint)?;
        let obs_dim = state_dim + dfa.n_states();
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        let actor = Mlp::new(&sizes, rng);
        sizes[0] = obs_dim + action_dim;
        *sizes.last_mut().expect("non-empty") = 1;
        let mut critic = || Mlp::new(&sizes, rng);
        let q_r = [critic(), critic()];
        let q_c = [critic(), critic()];
        Ok(LagrangianPolicy {
            constraint: constraint.clone(),
            dfa,
            state_dim,
            action_dim,
            action_bound,
            obs_mean: vec![0.0; state_dim],
            obs_std: vec![1.0; state_dim],
            actor,
            q_r_targ: q_r.clone(),
            q_r,
            q_c_targ: q_c.clone(),
            q_c,
            log_alpha: 0.0,
            lambda: 0.0,
        })
    }

    pub fn dfa(&self) -> &Dfa {
        &self.dfa
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn action_bound(&self) -> f64 {
        self.action_bound
    }

    pub fn entropy_coef(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn obs_dim(&self) -> usize {
        self.state_dim + self.dfa.n_states()
    }

    /// Freezes observation normalization statistics.
    pub fn set_normalization(&mut self, mean: Vec<f32>, std: Vec<f32>) {
        assert_eq!(mean.len(), self.state_dim);
        assert_eq!(std.len(), self.state_dim);
        self.obs_mean = mean;
        self.obs_std = std;
    }

    /// Network input for environment state `s` in automaton state `q`.
    pub fn observation(&self, s: &[f64], q: usize) -> Vec<f32> {
        let mut o = Vec::with_capacity(self.obs_dim());
        for (i, v) in s.iter().enumerate() {
            o.push(((*v as f32) - self.obs_mean[i]) / self.obs_std[i]);
        }
        o.extend((0..self.dfa.n_states()).map(|k| if k == q { 1.0 } else { 0.0 }));
        o
    }

    fn head(&self, out: &Array2<f32>) -> (Array2<f32>, Array2<f32>, Array2<bool>) {
        let a = self.action_dim;
        let mean = out.slice(ndarray::s![.., ..a]).to_owned();
        let raw = out.slice(ndarray::s![.., a..]);
        let clamped = raw.mapv(|v| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        (mean, log_std, clamped)
    }

    /// Action in environment units. Deterministic mode returns the squashed
    /// mean.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f32], deterministic: bool, rng: &mut R) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, obs.len()), obs).expect("observation width");
        let out = self.actor.predict(x);
        let (mean, log_std, _) = self.head(&out);
        (0..self.action_dim)
            .map(|j| {
                let mut u = mean[[0, j]];
                if !deterministic {
                    u += log_std[[0, j]].exp() * rng.sample::<f32, _>(StandardNormal);
                }
                u.tanh() as f64 * self.action_bound
            })
            .collect()
    }

    fn sample_actions<R: Rng + ?Sized>(&self, obs: ArrayView2<'_, f32>, rng: &mut R) -> ActorSample {
        let eps = Array2::from_shape_simple_fn((obs.nrows(), self.action_dim), || rng.sample::<f32, _>(StandardNormal));
        self.actions_with_noise(obs, eps)
    }

    fn actions_with_noise(&self, obs: ArrayView2<'_, f32>, eps: Array2<f32>) -> ActorSample {
        let tape = self.actor.forward(obs);
        let (mean, log_std, clamped) = self.head(tape.output());
        let sigma = log_std.mapv(f32::exp);
        let y = (&mean + &(&sigma * &eps)).mapv(f32::tanh);
        let logp = (0..mean.nrows())
            .map(|i| {
                (0..self.action_dim)
                    .map(|j| {
                        let e = eps[[i, j]];
                        let yj = y[[i, j]];
                        -0.5 * e * e - log_std[[i, j]] - HALF_LOG_2PI - (1.0 - yj * yj + SQUASH_EPS).ln()
                    })
                    .sum()
            })
            .collect();
        ActorSample { tape, eps, y, sigma, clamped, logp }
    }

    /// Reparameterized actor loss mean(α·logπ − min Q_r + λ·max Q_c) at
    /// fixed noise, with its gradient over the actor parameters.
    fn actor_loss_grad(&self, obs: &Array2<f32>, eps: Array2<f32>, alpha: f32, lambda: f32) -> (f64, Vec<f32>, Vec<f32>) {
        let n = obs.nrows();
        let inv_n = 1.0 / n as f32;
        let cur = self.actions_with_noise(obs.view(), eps);
        let act_in = concat(obs, &cur.y);
        let nets: Vec<&Mlp> = self.q_r.iter().chain(&self.q_c).collect();
        let tapes: Vec<_> = nets.iter().map(|q| q.forward(act_in.view())).collect();
        let mut sel: Vec<Array2<f32>> = (0..4).map(|_| Array2::zeros((n, 1))).collect();
        let mut loss = 0.0f64;
        for i in 0..n {
            let (r1, r2) = (tapes[0].output()[[i, 0]], tapes[1].output()[[i, 0]]);
            let (c1, c2) = (tapes[2].output()[[i, 0]], tapes[3].output()[[i, 0]]);
            sel[if r1 <= r2 { 0 } else { 1 }][[i, 0]] = -1.0;
            sel[if c1 >= c2 { 2 } else { 3 }][[i, 0]] = lambda;
            loss += (alpha * cur.logp[i] - r1.min(r2) + lambda * c1.max(c2)) as f64 / n as f64;
        }
        let obs_dim = obs.ncols();
        let mut g_act = Array2::<f32>::zeros((n, self.action_dim));
        for (k, s) in sel.into_iter().enumerate() {
            if k >= 2 && lambda == 0.0 {
                continue;
            }
            let mut scratch = vec![0.0; nets[k].params().len()];
            let gx = nets[k].backward(&tapes[k], s, &mut scratch);
            g_act += &gx.slice(ndarray::s![.., obs_dim..]);
        }
        let a = self.action_dim;
        let mut g_out = Array2::<f32>::zeros((n, 2 * a));
        for i in 0..n {
            for j in 0..a {
                let y = cur.y[[i, j]];
                let one_m = 1.0 - y * y;
                let dlogp_du = 2.0 * y * one_m / (one_m + SQUASH_EPS);
                let se = cur.sigma[[i, j]] * cur.eps[[i, j]];
                let g = g_act[[i, j]] * one_m;
                g_out[[i, j]] = inv_n * (alpha * dlogp_du + g);
                if !cur.clamped[[i, j]] {
                    g_out[[i, a + j]] = inv_n * (alpha * (-1.0 + dlogp_du * se) + g * se);
                }
            }
        }
        let mut grads = vec![0.0; self.actor.params().len()];
        self.actor.backward(&cur.tape, g_out, &mut grads);
        (loss, grads, cur.logp)
    }

    pub(crate) fn optimizers(&self, cfg: &super::CrlConfig) -> Optimizers {
        let adam = |n: &Mlp, lr: f64| Adam::new(n.params().len(), lr as f32);
        Optimizers {
            actor: adam(&self.actor, cfg.actor_lr),
            q_r: [adam(&self.q_r[0], cfg.critic_lr), adam(&self.q_r[1], cfg.critic_lr)],
            q_c: [adam(&self.q_c[0], cfg.critic_lr), adam(&self.q_c[1], cfg.critic_lr)],
            log_alpha: Adam::new(1, cfg.entropy_lr as f32),
        }
    }

    /// One soft actor-critic step on the Lagrangian objective, followed by
    /// projected dual ascent on λ with the average per-step cost `avg_cost`
    /// against the threshold `d`.
    pub(crate) fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        cfg: &super::CrlConfig,
        opt: &mut Optimizers,
        avg_cost: f64,
        rng: &mut R,
    ) -> UpdateStats {
        let n = batch.obs.nrows();
        let inv_n = 1.0 / n as f32;
        let gamma = cfg.gamma as f32;
        let alpha = self.log_alpha.exp() as f32;
        let lambda = self.lambda as f32;
        let target_entropy = cfg.target_entropy.unwrap_or(-(self.action_dim as f64)) as f32;

        // Critic targets.
        let next = self.sample_actions(batch.next_obs.view(), rng);
        let next_in = concat(&batch.next_obs, &next.y);
        let qr1 = self.q_r_targ[0].predict(next_in.view());
        let qr2 = self.q_r_targ[1].predict(next_in.view());
        let qc1 = self.q_c_targ[0].predict(next_in.view());
        let qc2 = self.q_c_targ[1].predict(next_in.view());
        let y_r: Vec<f32> = (0..n)
            .map(|i| batch.reward[i] + gamma * (qr1[[i, 0]].min(qr2[[i, 0]]) - alpha * next.logp[i]))
            .collect();
        let y_c: Vec<f32> = (0..n).map(|i| batch.cost[i] + gamma * qc1[[i, 0]].max(qc2[[i, 0]])).collect();

        let cur_in = concat(&batch.obs, &batch.act);
        let mut critic_loss = 0.0f64;
        for (nets, opts, targets) in [(&mut self.q_r, &mut opt.q_r, &y_r), (&mut self.q_c, &mut opt.q_c, &y_c)] {
            for k in 0..2 {
                let tape = nets[k].forward(cur_in.view());
                let mut g = Array2::zeros((n, 1));
                for i in 0..n {
                    let e = tape.output()[[i, 0]] - targets[i];
                    critic_loss += (e * e) as f64 / n as f64;
                    g[[i, 0]] = 2.0 * e * inv_n;
                }
                let mut grads = vec![0.0; nets[k].params().len()];
                nets[k].backward(&tape, g, &mut grads);
                opts[k].step(nets[k].params_mut(), &grads);
            }
        }

        // Actor.
        let eps = Array2::from_shape_simple_fn((n, self.action_dim), || rng.sample::<f32, _>(StandardNormal));
        let (actor_loss, grads, logp) = self.actor_loss_grad(&batch.obs, eps, alpha, lambda);
        opt.actor.step(self.actor.params_mut(), &grads);

        // Entropy temperature.
        let mean_logp = logp.iter().map(|v| *v as f64).sum::<f64>() / n as f64;
        let mut la = [self.log_alpha as f32];
        opt.log_alpha.step(&mut la, &[-(mean_logp as f32 + target_entropy)]);
        self.log_alpha = la[0] as f64;

        // Dual ascent.
        self.lambda = (self.lambda + cfg.lambda_lr * (avg_cost - cfg.threshold())).max(0.0);

        let tau = cfg.tau as f32;
        for k in 0..2 {
            self.q_r_targ[k].soft_update(&self.q_r[k], tau);
            self.q_c_targ[k].soft_update(&self.q_c[k], tau);
        }
        UpdateStats { critic_loss, actor_loss, entropy: -mean_logp }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite()
            && self.q_r.iter().chain(&self.q_c).all(Mlp::is_finite)
            && self.log_alpha.is_finite()
            && self.lambda.is_finite()
    }
}

fn concat(a: &Array2<f32>, b: &Array2<f32>) -> Array2<f32> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("matching rows")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tl::parse_formula;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn actions_respect_bound_and_observation_layout() {
        let f = parse_formula("G(s0 < 1)").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LagrangianPolicy::new(&f, 3, 2, 0.1, &[16], &mut rng).unwrap();
        assert_eq!(p.obs_dim(), 3 + p.dfa().n_states());
        let o = p.observation(&[0.5, 1.0, -1.0], 1);
        assert_eq!(&o[3..], &[0.0, 1.0]);
        for _ in 0..50 {
            let a = p.act(&o, false, &mut rng);
            assert!(a.iter().all(|v| v.abs() <= 0.1));
        }
        assert_eq!(p.act(&o, true, &mut rng), p.act(&o, true, &mut rng));
        assert!(LagrangianPolicy::new(&f, 0, 2, 0.1, &[16], &mut rng).is_err());
    }

    #[test]
    fn squashed_log_prob_matches_density() {
        // Monte Carlo check of the change of variables: E[exp(-logp)] over
        // samples equals the volume of (−1, 1)^|A| = 4 for two dimensions.
        let f = parse_formula("G(s0 < 1)").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = LagrangianPolicy::new(&f, 1, 2, 1.0, &[8], &mut rng).unwrap();
        let obs = Array2::from_shape_vec((1, p.obs_dim()), p.observation(&[0.2], 0)).unwrap();
        let obs = obs.broadcast((20000, p.obs_dim())).unwrap().to_owned();
        let s = p.sample_actions(obs.view(), &mut rng);
        let vol: f64 = s.logp.iter().map(|l| (-*l as f64).exp()).sum::<f64>() / 20000.0;
        assert!((vol - 4.0).abs() < 0.25, "{vol}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let f = parse_formula("G(s0 < 1)").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = LagrangianPolicy::new(&f, 2, 2, 1.0, &[6], &mut rng).unwrap();
        let obs = Array2::from_shape_fn((4, p.obs_dim()), |(i, j)| ((i * 7 + j * 3) % 5) as f32 * 0.3 - 0.6);
        let eps = Array2::from_shape_fn((4, 2), |(i, j)| ((i + 2 * j) % 3) as f32 * 0.7 - 0.7);
        let (alpha, lambda) = (0.3, 0.8);
        let (_, grads, _) = p.actor_loss_grad(&obs, eps.clone(), alpha, lambda);
        let h = 1e-3f32;
        let mut checked = 0;
        for k in 0..p.actor.params().len() {
            let mut plus = p.clone();
            plus.actor.params_mut()[k] += h;
            let mut minus = p.clone();
            minus.actor.params_mut()[k] -= h;
            let lp = plus.actor_loss_grad(&obs, eps.clone(), alpha, lambda).0;
            let lm = minus.actor_loss_grad(&obs, eps.clone(), alpha, lambda).0;
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!((fd - grads[k] as f64).abs() < 5e-3 + 0.05 * fd.abs(), "param {k}: {fd} vs {}", grads[k]);
            checked += 1;
        }
        assert!(checked > 20);
    }
}
