//! Genetic-programming search over parametric formulas that separate expert
//! traces from policy traces.

mod anneal;
mod ga;
mod ops;

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tl::{Formula, ParamVector, Program, Scratch, TlError, Trace};

pub use anneal::{dual_annealing, AnnealResult};
pub use ga::{mine, mine_with_report, GenerationRecord, MiningReport};
pub use ops::{
    basis_trees, crossover, finalize_offspring, mutation_a, mutation_r, random_pap, random_tree,
    repair_consistency, Offspring,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MiningError {
    #[error("expert set is empty")]
    EmptyExperts,
    #[error("trace dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no state dimensions selected")]
    EmptySelection,
    #[error("selected dimension {dim} out of range for {kappa}-dimensional traces")]
    DimOutOfRange { dim: usize, kappa: usize },
    #[error("annealing budget must be positive")]
    ZeroBudget,
    #[error("invalid mining config: {0}")]
    Config(String),
    #[error(transparent)]
    Logic(#[from] TlError),
}

/// Expert and negative traces with padded per-dimension bounds.
#[derive(Debug, Clone)]
pub struct Dataset {
    experts: Vec<Trace>,
    negatives: Vec<Trace>,
    kappa: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Dataset {
    pub fn new(experts: Vec<Trace>, negatives: Vec<Trace>) -> Result<Self, MiningError> {
        let kappa = experts.first().ok_or(MiningError::EmptyExperts)?.dim();
        let mut lo = vec![f64::INFINITY; kappa];
        let mut hi = vec![f64::NEG_INFINITY; kappa];
        for tr in experts.iter().chain(&negatives) {
            if tr.dim() != kappa {
                return Err(MiningError::DimensionMismatch { expected: kappa, found: tr.dim() });
            }
            for s in tr.states() {
                for (d, v) in s.iter().enumerate() {
                    lo[d] = lo[d].min(*v);
                    hi[d] = hi[d].max(*v);
                }
            }
        }
        Ok(Dataset { experts, negatives, kappa, lo, hi })
    }

    pub fn experts(&self) -> &[Trace] {
        &self.experts
    }

    pub fn negatives(&self) -> &[Trace] {
        &self.negatives
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// Observed (min, max) of dimension `d` over all traces.
    pub fn feature_range(&self, d: usize) -> (f64, f64) {
        (self.lo[d], self.hi[d])
    }

    /// Search box for thresholds on dimension `d`: the observed range
    /// widened by 10% on each side.
    pub fn bounds(&self, d: usize) -> (f64, f64) {
        let (lo, hi) = (self.lo[d], self.hi[d]);
        let range = hi - lo;
        let pad = if range > 0.0 { 0.1 * range } else { 0.1 * lo.abs().max(1.0) };
        (lo - pad, hi + pad)
    }

    fn check(&self, f: &Formula) -> Result<(), MiningError> {
        match f.max_dim() {
            Some(d) if d >= self.kappa => {
                Err(MiningError::DimensionMismatch { expected: self.kappa, found: d + 1 })
            }
            _ => Ok(()),
        }
    }
}

/// A parametric formula with fitted thresholds and its scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub skeleton: Formula,
    pub theta: ParamVector,
    pub fitness: f64,
    pub reg_fitness: f64,
    pub node_count: usize,
    /// Creation order, used for tie-breaking.
    pub created: u64,
}

impl Individual {
    pub fn new(skeleton: Formula, theta: ParamVector, fitness: f64, created: u64) -> Self {
        let node_count = skeleton.node_count();
        Individual { skeleton, theta, fitness, reg_fitness: fitness, node_count, created }
    }

    /// The concrete formula obtained by substituting `theta`.
    pub fn formula(&self) -> Formula {
        self.skeleton.instantiate(&self.theta).expect("theta fitted to skeleton")
    }

    /// Total order used for parent selection: higher regularized fitness,
    /// then fewer nodes, then earlier creation.
    pub fn rank_cmp(&self, other: &Individual) -> Ordering {
        other
            .reg_fitness
            .total_cmp(&self.reg_fitness)
            .then(self.node_count.cmp(&other.node_count))
            .then(self.created.cmp(&other.created))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Population size N.
    pub population: usize,
    /// Upper bound on basis trees kept in the initial population (N_B).
    pub basis_count: usize,
    /// Parent pool size N_p.
    pub parents: usize,
    pub tournament_size: usize,
    /// Size penalty weight ζ.
    pub zeta: f64,
    /// Random tree depth limit d_R.
    pub random_depth: usize,
    /// Random tree early-stop probability p_R.
    pub random_stop: f64,
    pub max_generations: usize,
    /// Generation cap applied when mining inside the learning loop.
    pub mining_step_cap: usize,
    pub seed: u64,
    /// Objective evaluations per parameter fit.
    pub anneal_budget: usize,
    /// Dimensions to build basis trees over; screened automatically if unset.
    pub selected_dims: Option<Vec<usize>>,
    /// Maximum number of automatically selected dimensions.
    pub max_selected_dims: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            population: 64,
            basis_count: 32,
            parents: 16,
            tournament_size: 3,
            zeta: 0.01,
            random_depth: 3,
            random_stop: 0.1,
            max_generations: 30,
            mining_step_cap: 5,
            seed: 0,
            anneal_budget: 300,
            selected_dims: None,
            max_selected_dims: 6,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        let bad = |m: &str| Err(MiningError::Config(m.to_string()));
        if self.population == 0 {
            return bad("population must be positive");
        }
        if self.basis_count > self.population {
            return bad("basis_count exceeds population");
        }
        if self.parents == 0 || self.parents > self.population {
            return bad("parents must be in 1..=population");
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be positive");
        }
        if !(self.zeta >= 0.0) {
            return bad("zeta must be non-negative");
        }
        if self.random_depth == 0 {
            return bad("random_depth must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.random_stop) {
            return bad("random_stop must lie in [0, 1]");
        }
        if self.anneal_budget == 0 {
            return Err(MiningError::ZeroBudget);
        }
        if self.max_selected_dims == 0 {
            return bad("max_selected_dims must be positive");
        }
        if matches!(&self.selected_dims, Some(d) if d.is_empty()) {
            return Err(MiningError::EmptySelection);
        }
        Ok(())
    }

    /// Number of random trees N_R.
    pub fn random_count(&self) -> usize {
        self.population - self.basis_count
    }
}

/// Exact separation score: the fraction of negatives violated, times one if
/// every expert is satisfied and zero otherwise.
pub fn fitness(f: &Formula, theta: &ParamVector, data: &Dataset) -> Result<f64, MiningError> {
    let concrete = f.instantiate(theta)?;
    data.check(&concrete)?;
    let mut obj = Objective::new(&concrete, data);
    Ok(obj.exact(&[]))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Expert margins are smoothed with τ / EXPERT_SHARPNESS, so among
/// thresholds of equal fitness the surrogate prefers the most restrictive
/// one that still leaves every expert a small margin.
const EXPERT_SHARPNESS: f64 = 10.0;

/// Robustness evaluation of one skeleton against a dataset.
struct Objective<'a> {
    program: Program,
    data: &'a Dataset,
    scratch: Scratch,
    tau: f64,
}

impl<'a> Objective<'a> {
    fn new(f: &Formula, data: &'a Dataset) -> Self {
        let mut dims = Vec::new();
        f.for_each_ap(&mut |ap| dims.push(ap.dim));
        let ranges: Vec<f64> = dims
            .iter()
            .map(|&d| {
                let (lo, hi) = data.feature_range(d);
                if hi > lo { hi - lo } else { 1.0 }
            })
            .collect();
        let mean_range =
            if ranges.is_empty() { 1.0 } else { ranges.iter().sum::<f64>() / ranges.len() as f64 };
        Objective { program: Program::compile(f), data, scratch: Scratch::default(), tau: 0.05 * mean_range }
    }

    fn exact(&mut self, theta: &[f64]) -> f64 {
        if self.data.negatives.is_empty() {
            return 0.0;
        }
        for tr in &self.data.experts {
            if self.program.rho0(tr, theta, &mut self.scratch) <= 0.0 {
                return 0.0;
            }
        }
        let violated = self
            .data
            .negatives
            .iter()
            .filter(|tr| self.program.rho0(tr, theta, &mut self.scratch) < 0.0)
            .count();
        violated as f64 / self.data.negatives.len() as f64
    }

    /// Returns (exact fitness, smoothed surrogate).
    fn both(&mut self, theta: &[f64]) -> (f64, f64) {
        let mut all_experts = true;
        let mut expert_term = 1.0f64;
        for tr in &self.data.experts {
            let rho = self.program.rho0(tr, theta, &mut self.scratch);
            all_experts &= rho > 0.0;
            expert_term = expert_term.min(sigmoid(rho * EXPERT_SHARPNESS / self.tau));
        }
        let n_neg = self.data.negatives.len();
        if n_neg == 0 {
            return (0.0, expert_term);
        }
        let mut violated = 0usize;
        let mut neg_term = 0.0;
        for tr in &self.data.negatives {
            let rho = self.program.rho0(tr, theta, &mut self.scratch);
            if rho < 0.0 {
                violated += 1;
            }
            neg_term += sigmoid(-rho / self.tau);
        }
        let exact = if all_experts { violated as f64 / n_neg as f64 } else { 0.0 };
        (exact, neg_term / n_neg as f64 * expert_term)
    }
}

/// Fits the thresholds of `skeleton` by annealing a smoothed surrogate.
///
/// Returns the visited parameters that maximize exact fitness, breaking ties
/// by the surrogate, together with that exact fitness.
pub fn optimize_params<R: Rng + ?Sized>(
    skeleton: &Formula,
    data: &Dataset,
    budget: usize,
    rng: &mut R,
) -> Result<(ParamVector, f64), MiningError> {
    optimize_params_from(skeleton, data, budget, None, rng)
}

/// As [`optimize_params`], evaluating `start` (in tree order) first.
pub fn optimize_params_from<R: Rng + ?Sized>(
    skeleton: &Formula,
    data: &Dataset,
    budget: usize,
    start: Option<&[f64]>,
    rng: &mut R,
) -> Result<(ParamVector, f64), MiningError> {
    let fit = fit(skeleton, data, budget, start, rng)?;
    Ok((fit.theta, fit.fitness))
}

pub(crate) struct Fit {
    pub theta: ParamVector,
    pub fitness: f64,
    pub surrogate: f64,
}

pub(crate) fn fit<R: Rng + ?Sized>(
    skeleton: &Formula,
    data: &Dataset,
    budget: usize,
    start: Option<&[f64]>,
    rng: &mut R,
) -> Result<Fit, MiningError> {
    if budget == 0 {
        return Err(MiningError::ZeroBudget);
    }
    data.check(skeleton)?;
    let ids = skeleton.collect_params();
    let mut bounds = Vec::with_capacity(ids.len());
    skeleton.for_each_ap(&mut |ap| {
        if matches!(ap.threshold, crate::tl::Threshold::Param(_)) {
            bounds.push(data.bounds(ap.dim));
        }
    });
    let mut obj = Objective::new(skeleton, data);
    if ids.is_empty() {
        let (fitness, surrogate) = obj.both(&[]);
        return Ok(Fit { theta: ParamVector::new(), fitness, surrogate });
    }
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    dual_annealing(&bounds, budget, start, rng, |x| {
        let (exact, surrogate) = obj.both(x);
        let better = match &best {
            None => true,
            Some((e, s, _)) => exact > *e || (exact == *e && surrogate > *s),
        };
        if better {
            best = Some((exact, surrogate, x.to_vec()));
        }
        -surrogate
    });
    let (fitness, surrogate, x) = best.expect("at least one evaluation");
    Ok(Fit { theta: ParamVector::from_ids(&ids, &x), fitness, surrogate })
}

/// Recomputes F^Φ = F − ζ · mean(F) · (|V| − 2)² for every individual.
pub fn regularized_fitness(population: &mut [Individual], zeta: f64) -> Result<(), MiningError> {
    if population.is_empty() {
        return Err(MiningError::Config("empty population".into()));
    }
    let mean = population.iter().map(|i| i.fitness).sum::<f64>() / population.len() as f64;
    for ind in population.iter_mut() {
        let excess = ind.node_count as f64 - 2.0;
        ind.reg_fitness = ind.fitness - zeta * mean * excess * excess;
    }
    Ok(())
}

/// The top `n_parents` individuals by regularized fitness, best first.
pub fn select_parents(population: &[Individual], n_parents: usize) -> Vec<Individual> {
    let mut sorted: Vec<&Individual> = population.iter().collect();
    sorted.sort_by(|a, b| a.rank_cmp(b));
    sorted.into_iter().take(n_parents).cloned().collect()
}

/// Tournament draw from a parent pool: the best of `size` uniform picks.
pub fn tournament<'a, R: Rng + ?Sized>(
    pool: &'a [Individual],
    size: usize,
    rng: &mut R,
) -> &'a Individual {
    let mut best = &pool[rng.random_range(0..pool.len())];
    for _ in 1..size {
        let cand = &pool[rng.random_range(0..pool.len())];
        if cand.rank_cmp(best) == Ordering::Less {
            best = cand;
        }
    }
    best
}

/// Independent RNG stream for a (seed, a, b) triple.
pub(crate) fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tl::parse_formula;

    fn tr(v: &[f64]) -> Trace {
        Trace::new(v.iter().map(|x| vec![*x]).collect()).unwrap()
    }

    fn ind(fitness: f64, nodes: usize, created: u64) -> Individual {
        let mut f = Formula::Ap(crate::tl::Ap::param(0, crate::tl::Cmp::Lt, 0));
        while f.node_count() < nodes {
            f = Formula::always(f);
        }
        Individual::new(f, ParamVector::from_ids(&[0], &[0.0]), fitness, created)
    }

    #[test]
    fn fitness_arithmetic() {
        let f = parse_formula("G(s0 < 1)").unwrap();
        let data = Dataset::new(vec![tr(&[0.0, 0.5])], vec![tr(&[0.0, 2.0]), tr(&[0.2])]).unwrap();
        assert_eq!(fitness(&f, &ParamVector::new(), &data).unwrap(), 0.5);
        let bad = Dataset::new(vec![tr(&[0.0, 1.1])], vec![tr(&[0.0, 2.0])]).unwrap();
        assert_eq!(fitness(&f, &ParamVector::new(), &bad).unwrap(), 0.0);
        let none = Dataset::new(vec![tr(&[0.0])], vec![]).unwrap();
        assert_eq!(fitness(&f, &ParamVector::new(), &none).unwrap(), 0.0);
        let wide = parse_formula("G(s3 < 1)").unwrap();
        assert!(matches!(
            fitness(&wide, &ParamVector::new(), &data),
            Err(MiningError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dataset_validation() {
        assert_eq!(Dataset::new(vec![], vec![]).unwrap_err(), MiningError::EmptyExperts);
        let mixed = Dataset::new(vec![tr(&[0.0])], vec![Trace::new(vec![vec![0.0, 1.0]]).unwrap()]);
        assert!(matches!(mixed, Err(MiningError::DimensionMismatch { .. })));
        let d = Dataset::new(vec![tr(&[0.0, 1.0])], vec![tr(&[2.0])]).unwrap();
        assert_eq!(d.bounds(0), (-0.2, 2.2));
    }

    #[test]
    fn optimizer_separates_threshold() {
        let experts: Vec<_> = (0..5).map(|i| tr(&[0.1 * i as f64, 0.2])).collect();
        let negatives: Vec<_> = (0..5).map(|i| tr(&[0.0, 1.0 + 0.1 * i as f64])).collect();
        let data = Dataset::new(experts, negatives).unwrap();
        let skel = parse_formula("G(s0 < ?p0)").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (theta, fit) = optimize_params(&skel, &data, 300, &mut rng).unwrap();
        assert_eq!(fit, 1.0);
        let b = theta.get(0).unwrap();
        assert!(b > 0.4 && b < 1.0, "{b}");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(optimize_params(&skel, &data, 300, &mut rng).unwrap().0, theta);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(optimize_params(&skel, &data, 0, &mut rng), Err(MiningError::ZeroBudget));
        let closed = parse_formula("G(s0 < 0.7)").unwrap();
        let (theta, fit) = optimize_params(&closed, &data, 300, &mut rng).unwrap();
        assert!(theta.is_empty());
        assert_eq!(fit, 1.0);
    }

    #[test]
    fn regularization_arithmetic() {
        let mut pop = vec![ind(1.0, 2, 0)];
        regularized_fitness(&mut pop, 0.01).unwrap();
        assert_eq!(pop[0].reg_fitness, 1.0);

        let mut pop = vec![ind(1.0, 6, 0), ind(0.0, 2, 1)];
        regularized_fitness(&mut pop, 0.01).unwrap();
        assert!((pop[0].reg_fitness - 0.92).abs() < 1e-12);

        let mut pop = vec![ind(0.0, 5, 0), ind(0.0, 9, 1)];
        regularized_fitness(&mut pop, 0.01).unwrap();
        assert!(pop.iter().all(|i| i.reg_fitness == 0.0));
        assert!(regularized_fitness(&mut [], 0.01).is_err());
    }

    #[test]
    fn parent_pool_ordering() {
        let pop = vec![ind(0.5, 3, 0), ind(0.9, 4, 1), ind(0.5, 2, 2), ind(0.5, 2, 3), ind(0.1, 2, 4)];
        let parents = select_parents(&pop, 3);
        let order: Vec<u64> = parents.iter().map(|p| p.created).collect();
        assert_eq!(order, vec![1, 2, 3]);
        assert_eq!(select_parents(&pop, 5).len(), 5);
    }

    #[test]
    fn tournament_picks_from_pool() {
        let pool = vec![ind(0.5, 3, 0), ind(0.9, 4, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wins = (0..100).filter(|_| tournament(&pool, 3, &mut rng).created == 1).count();
        assert!(wins > 80);
    }
}
