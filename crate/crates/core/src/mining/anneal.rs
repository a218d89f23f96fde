//! Generalized simulated annealing with a local polishing phase, in the
//! style of dual annealing (Tsallis visiting distribution, generalized
//! Metropolis acceptance).

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

const VISIT: f64 = 2.62;
const ACCEPT: f64 = -5.0;
const INITIAL_TEMP: f64 = 5230.0;
const RESTART_RATIO: f64 = 2e-5;
const LOCAL_SHARE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct AnnealResult {
    pub x: Vec<f64>,
    pub energy: f64,
    pub evaluations: usize,
}

struct Visitor {
    factor_sigma: f64,
}

impl Visitor {
    fn new() -> Self {
        let qv = VISIT;
        let f2 = ((4.0 - qv) * (qv - 1.0).ln()).exp();
        let f3 = ((2.0 - qv) * 2f64.ln() / (qv - 1.0)).exp();
        let f4p = std::f64::consts::PI.sqrt() * f2 / (f3 * (3.0 - qv));
        let f5 = 1.0 / (qv - 1.0) - 0.5;
        let d1 = 2.0 - f5;
        let f6 = std::f64::consts::PI * (1.0 - f5)
            / (std::f64::consts::PI * (1.0 - f5)).sin()
            / ln_gamma(d1).exp();
        Visitor { factor_sigma: f6 / f4p }
    }

    /// One Tsallis-distributed step at temperature `temp`.
    fn step<R: Rng + ?Sized>(&self, temp: f64, rng: &mut R) -> f64 {
        let qv = VISIT;
        let f1 = (temp.ln() / (qv - 1.0)).exp();
        let sigma = (-(qv - 1.0) * (self.factor_sigma / f1).ln() / (3.0 - qv)).exp();
        let x: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let den = ((qv - 1.0) * y.abs().ln() / (3.0 - qv)).exp();
        let v = x / den;
        if v.is_finite() {
            v.clamp(-1e8, 1e8)
        } else {
            1e8 * x.signum()
        }
    }
}

fn wrap(v: f64, lo: f64, hi: f64) -> f64 {
    let range = hi - lo;
    if range <= 0.0 {
        return lo;
    }
    let mut r = (v - lo) % range;
    if r < 0.0 {
        r += range;
    }
    lo + r
}

/// Minimizes `energy` over the box `bounds` using at most `budget` calls.
///
/// Deterministic for a given RNG state. `x0`, when given, is the first
/// point evaluated.
pub fn dual_annealing<R, F>(
    bounds: &[(f64, f64)],
    budget: usize,
    x0: Option<&[f64]>,
    rng: &mut R,
    mut energy: F,
) -> AnnealResult
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    let dim = bounds.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        energy(x)
    };
    if dim == 0 || budget == 0 {
        let e = if budget == 0 { f64::INFINITY } else { eval(&[], &mut evals) };
        return AnnealResult { x: vec![], energy: e, evaluations: evals };
    }
    let random_point = |rng: &mut R| -> Vec<f64> {
        bounds.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect()
    };
    let mut current = match x0 {
        Some(x) if x.len() == dim => x.to_vec(),
        _ => random_point(rng),
    };
    let mut current_e = eval(&current, &mut evals);
    let mut best = current.clone();
    let mut best_e = current_e;
    let visitor = Visitor::new();
    let global_budget = budget - ((budget as f64 * LOCAL_SHARE) as usize).min(budget - 1);
    let t1 = ((VISIT - 1.0) * 2f64.ln()).exp() - 1.0;
    let mut iteration = 0usize;

    'outer: while evals < global_budget {
        let t2 = ((VISIT - 1.0) * ((iteration + 2) as f64).ln()).exp() - 1.0;
        let temp = INITIAL_TEMP * t1 / t2;
        if temp < INITIAL_TEMP * RESTART_RATIO {
            iteration = 0;
            current = random_point(rng);
            current_e = eval(&current, &mut evals);
            continue;
        }
        let temp_step = temp / (iteration + 1) as f64;
        // A chain move perturbs all coordinates, then each coordinate alone.
        for j in 0..2 * dim {
            if evals >= global_budget {
                break 'outer;
            }
            let mut cand = current.clone();
            if j < dim {
                for (i, c) in cand.iter_mut().enumerate() {
                    let (lo, hi) = bounds[i];
                    *c = wrap(*c + visitor.step(temp, rng) * (hi - lo) / 10.0, lo, hi);
                }
            } else {
                let i = j - dim;
                let (lo, hi) = bounds[i];
                cand[i] = wrap(cand[i] + visitor.step(temp, rng) * (hi - lo) / 10.0, lo, hi);
            }
            let e = eval(&cand, &mut evals);
            let accept = if e < current_e {
                true
            } else {
                let p = 1.0 - (1.0 - ACCEPT) * (e - current_e) / temp_step;
                let prob = if p <= 0.0 { 0.0 } else { (p.ln() / (1.0 - ACCEPT)).exp() };
                rng.random::<f64>() <= prob
            };
            if accept {
                current = cand;
                current_e = e;
                if e < best_e {
                    best_e = e;
                    best = current.clone();
                }
            }
        }
        iteration += 1;
    }

    // Local polish: shrinking coordinate pattern search around the best.
    let mut step: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) * 0.05).collect();
    while evals < budget {
        let mut improved = false;
        for i in 0..dim {
            for dir in [1.0, -1.0] {
                if evals >= budget {
                    break;
                }
                let mut cand = best.clone();
                cand[i] = (cand[i] + dir * step[i]).clamp(bounds[i].0, bounds[i].1);
                let e = eval(&cand, &mut evals);
                if e < best_e {
                    best_e = e;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
            if step.iter().all(|s| *s < 1e-9) {
                break;
            }
        }
    }
    AnnealResult { x: best, energy: best_e, evaluations: evals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn finds_rastrigin_basin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = |x: &[f64]| {
            x.iter()
                .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos() + 10.0)
                .sum::<f64>()
        };
        let res = dual_annealing(&[(-5.12, 5.12); 2], 3000, None, &mut rng, f);
        assert!(res.energy < 1.0, "{res:?}");
        assert!(res.evaluations <= 3000);
    }

    #[test]
    fn respects_budget_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = 0;
        let res = dual_annealing(&[(0.0, 1.0), (2.0, 3.0)], 50, None, &mut rng, |x| {
            seen += 1;
            assert!((0.0..=1.0).contains(&x[0]) && (2.0..=3.0).contains(&x[1]));
            (x[0] - 0.3).powi(2) + (x[1] - 2.5).powi(2)
        });
        assert_eq!(seen, res.evaluations);
        assert!(res.evaluations <= 50);
        assert!(res.energy < 0.05);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            dual_annealing(&[(-1.0, 1.0); 3], 200, None, &mut rng, |x| x.iter().map(|v| v.abs()).sum())
        };
        assert_eq!(run().x, run().x);
    }

    #[test]
    fn empty_box_evaluates_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let res = dual_annealing(&[], 300, None, &mut rng, |_| 4.0);
        assert_eq!(res.evaluations, 1);
        assert_eq!(res.energy, 4.0);
    }
}
