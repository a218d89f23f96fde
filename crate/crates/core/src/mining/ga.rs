//! The generational loop: initial population, parent selection, offspring.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{basis_trees, crossover, finalize_offspring, mutation_a, mutation_r, random_tree, Offspring};
use super::{fit, regularized_fitness, select_parents, stream, tournament, Dataset, Individual, MiningConfig, MiningError};
use crate::tl::Formula;

const SCREEN_STREAM: u64 = u64::MAX;
const OPERATOR_STREAM: u64 = u64::MAX - 1;

/// Per-generation summary, one JSON line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_formula: String,
    pub fitness: f64,
    pub reg_fitness: f64,
    pub node_count: usize,
    pub best_raw_fitness: f64,
    pub mean_fitness: f64,
    pub population: usize,
    pub repairs: usize,
    pub rejected: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub selected_dims: Vec<usize>,
    pub generations: Vec<GenerationRecord>,
    pub repairs: usize,
    pub rejected: usize,
}

impl MiningReport {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in &self.generations {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs the search and returns the individual with the highest
/// regularized fitness (restricted to perfect separators when one exists).
pub fn mine(data: &Dataset, cfg: &MiningConfig, priors: &[Formula]) -> Result<Individual, MiningError> {
    mine_with_report(data, cfg, priors).map(|(best, _)| best)
}

pub fn mine_with_report(
    data: &Dataset,
    cfg: &MiningConfig,
    priors: &[Formula],
) -> Result<(Individual, MiningReport), MiningError> {
    cfg.validate()?;
    let mut miner = Miner { data, cfg, next_id: 0, repairs: 0, rejected: 0, start: Instant::now() };
    let dims = miner.select_dims()?;
    let basis = basis_trees(data.kappa(), &dims)?;
    let mut report = MiningReport { selected_dims: dims.clone(), ..Default::default() };

    let mut pop = miner.initial_population(&basis, priors)?;
    regularized_fitness(&mut pop, cfg.zeta)?;
    report.generations.push(miner.record(0, &pop));

    for gen in 1..=cfg.max_generations {
        if pop.iter().any(|i| i.fitness >= 1.0) {
            break;
        }
        pop = miner.next_generation(gen, &pop, &basis, &dims)?;
        regularized_fitness(&mut pop, cfg.zeta)?;
        report.generations.push(miner.record(gen, &pop));
    }
    report.repairs = miner.repairs;
    report.rejected = miner.rejected;

    let perfect: Vec<&Individual> = pop.iter().filter(|i| i.fitness >= 1.0).collect();
    let candidates = if perfect.is_empty() { pop.iter().collect() } else { perfect };
    let best = candidates.into_iter().min_by(|a, b| a.rank_cmp(b)).expect("non-empty population");
    Ok((best.clone(), report))
}

struct Miner<'a> {
    data: &'a Dataset,
    cfg: &'a MiningConfig,
    next_id: u64,
    repairs: usize,
    rejected: usize,
    start: Instant,
}

type Candidate = (Formula, Option<Vec<f64>>);

fn key(skeleton: &Formula) -> String {
    skeleton.to_string()
}

impl Miner<'_> {
    fn select_dims(&mut self) -> Result<Vec<usize>, MiningError> {
        let kappa = self.data.kappa();
        if let Some(dims) = &self.cfg.selected_dims {
            if let Some(&dim) = dims.iter().find(|d| **d >= kappa) {
                return Err(MiningError::DimOutOfRange { dim, kappa });
            }
            let mut dims = dims.clone();
            dims.sort_unstable();
            dims.dedup();
            return Ok(dims);
        }
        if kappa <= self.cfg.max_selected_dims {
            return Ok((0..kappa).collect());
        }
        // Screen each dimension by its best single-dimension basis tree.
        let budget = (self.cfg.anneal_budget / 3).max(30);
        let mut scores = Vec::with_capacity(kappa);
        for d in 0..kappa {
            let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (i, tree) in basis_trees(kappa, &[d])?.iter().enumerate() {
                let mut rng = stream(self.cfg.seed, SCREEN_STREAM, (d * 64 + i) as u64);
                let f = fit(tree, self.data, budget, None, &mut rng)?;
                if (f.fitness, f.surrogate) > best {
                    best = (f.fitness, f.surrogate);
                }
            }
            scores.push((d, best));
        }
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        let mut dims: Vec<usize> =
            scores.into_iter().take(self.cfg.max_selected_dims).map(|(d, _)| d).collect();
        dims.sort_unstable();
        log::debug!("selected dimensions {dims:?}");
        Ok(dims)
    }

    /// Fits each candidate with its own RNG stream. Returns individuals with
    /// their surrogate scores.
    fn evaluate(&mut self, gen: usize, cands: Vec<Candidate>) -> Result<Vec<(Individual, f64)>, MiningError> {
        let mut out = Vec::with_capacity(cands.len());
        for (idx, (skeleton, start)) in cands.into_iter().enumerate() {
            let mut rng = stream(self.cfg.seed, gen as u64, idx as u64);
            let f = fit(&skeleton, self.data, self.cfg.anneal_budget, start.as_deref(), &mut rng)?;
            let ind = Individual::new(skeleton, f.theta, f.fitness, self.next_id);
            self.next_id += 1;
            out.push((ind, f.surrogate));
        }
        Ok(out)
    }

    fn initial_population(&mut self, basis: &[Formula], priors: &[Formula]) -> Result<Vec<Individual>, MiningError> {
        let cfg = self.cfg;
        let mut seen = HashSet::new();
        let mut cands: Vec<Candidate> = Vec::new();
        for prior in priors {
            let skeleton = prior.to_skeleton();
            let mut start = Vec::new();
            prior.for_each_ap(&mut |ap| start.push(ap.value().unwrap_or(0.0)));
            if seen.insert(key(&skeleton)) {
                let start = if prior.is_concrete() { Some(start) } else { None };
                cands.push((skeleton, start));
            }
        }
        let n_priors = cands.len();
        for b in basis {
            if !seen.contains(&key(b)) {
                cands.push((b.clone(), None));
            }
        }
        let evaluated = self.evaluate(0, cands)?;
        let (prior_inds, mut basis_inds): (Vec<_>, Vec<_>) =
            evaluated.into_iter().enumerate().partition(|(i, _)| *i < n_priors);
        basis_inds.sort_by(|(_, (a, sa)), (_, (b, sb))| {
            b.fitness
                .total_cmp(&a.fitness)
                .then(sb.total_cmp(sa))
                .then(a.node_count.cmp(&b.node_count))
                .then(a.created.cmp(&b.created))
        });
        let mut pop: Vec<Individual> = Vec::with_capacity(cfg.population);
        for (_, (ind, _)) in basis_inds.into_iter().take(cfg.basis_count) {
            seen.insert(key(&ind.skeleton));
            pop.push(ind);
        }
        pop.extend(prior_inds.into_iter().map(|(_, (ind, _))| ind));

        let mut rng = stream(cfg.seed, OPERATOR_STREAM, 0);
        let mut randoms = Vec::new();
        let mut attempts = 0;
        while pop.len() + randoms.len() < cfg.population && attempts < 50 * cfg.population {
            attempts += 1;
            let t = random_tree(basis, cfg.random_depth, cfg.random_stop, &mut rng);
            if seen.insert(key(&t)) {
                randoms.push((t, None));
            }
        }
        pop.extend(self.evaluate(1_000_000, randoms)?.into_iter().map(|(i, _)| i));
        Ok(pop)
    }

    fn next_generation(
        &mut self,
        gen: usize,
        pop: &[Individual],
        basis: &[Formula],
        dims: &[usize],
    ) -> Result<Vec<Individual>, MiningError> {
        let cfg = self.cfg;
        let pool = select_parents(pop, cfg.parents);
        let mut rng = stream(cfg.seed, OPERATOR_STREAM, gen as u64);

        let mut next: Vec<Individual> = Vec::with_capacity(cfg.population);
        let mut seen = HashSet::new();
        let by_reg = pop.iter().min_by(|a, b| a.rank_cmp(b)).expect("non-empty");
        let by_raw = pop
            .iter()
            .min_by(|a, b| b.fitness.total_cmp(&a.fitness).then(a.rank_cmp(b)))
            .expect("non-empty");
        for elite in [by_reg, by_raw] {
            if seen.insert(key(&elite.skeleton)) {
                next.push(elite.clone());
            }
        }

        let mut cands: Vec<Candidate> = Vec::new();
        let mut attempts = 0;
        while next.len() + cands.len() < cfg.population && attempts < 50 * cfg.population {
            attempts += 1;
            let a = &tournament(&pool, cfg.tournament_size, &mut rng).skeleton;
            let b = &tournament(&pool, cfg.tournament_size, &mut rng).skeleton;
            let children = match rng.random_range(0..3) {
                0 => {
                    let (x, y) = crossover(a, b, &mut rng);
                    vec![x, y]
                }
                1 => vec![mutation_r(a, dims, &mut rng), mutation_r(b, dims, &mut rng)],
                _ => vec![mutation_a(a, dims, &mut rng), mutation_a(b, dims, &mut rng)],
            };
            for child in children {
                if next.len() + cands.len() >= cfg.population {
                    break;
                }
                let f = match finalize_offspring(&child) {
                    Offspring::Valid(f) => f,
                    Offspring::Repaired(f) => {
                        self.repairs += 1;
                        f
                    }
                    Offspring::Rejected => {
                        self.rejected += 1;
                        continue;
                    }
                };
                if seen.insert(key(&f)) {
                    cands.push((f, None));
                }
            }
        }
        while next.len() + cands.len() < cfg.population && attempts < 100 * cfg.population {
            attempts += 1;
            let t = random_tree(basis, cfg.random_depth, cfg.random_stop, &mut rng);
            if seen.insert(key(&t)) {
                cands.push((t, None));
            }
        }
        next.extend(self.evaluate(gen, cands)?.into_iter().map(|(i, _)| i));
        Ok(next)
    }

    fn record(&self, generation: usize, pop: &[Individual]) -> GenerationRecord {
        let best = pop.iter().min_by(|a, b| a.rank_cmp(b)).expect("non-empty");
        let rec = GenerationRecord {
            generation,
            best_formula: best.formula().to_string(),
            fitness: best.fitness,
            reg_fitness: best.reg_fitness,
            node_count: best.node_count,
            best_raw_fitness: pop.iter().map(|i| i.fitness).fold(0.0, f64::max),
            mean_fitness: pop.iter().map(|i| i.fitness).sum::<f64>() / pop.len() as f64,
            population: pop.len(),
            repairs: self.repairs,
            rejected: self.rejected,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        };
        log::info!(
            "generation {}: best {} (F={:.3}, F_reg={:.3}), max F={:.3}",
            rec.generation,
            rec.best_formula,
            rec.fitness,
            rec.reg_fitness,
            rec.best_raw_fitness
        );
        rec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tl::{parse_formula, Trace};

    fn tr(v: &[f64]) -> Trace {
        Trace::new(v.iter().map(|x| vec![*x, -x]).collect()).unwrap()
    }

    fn small_cfg() -> MiningConfig {
        MiningConfig { population: 20, basis_count: 10, parents: 6, max_generations: 3, anneal_budget: 60, ..Default::default() }
    }

    #[test]
    fn basis_separable_stops_at_generation_zero() {
        let experts: Vec<_> = (0..4).map(|i| tr(&[0.1 * i as f64, 0.3, 0.2])).collect();
        let negatives: Vec<_> = (0..6).map(|i| tr(&[0.2, 1.0 + 0.1 * i as f64, 0.1])).collect();
        let data = Dataset::new(experts, negatives).unwrap();
        let (best, report) = mine_with_report(&data, &small_cfg(), &[]).unwrap();
        assert_eq!(best.fitness, 1.0);
        assert_eq!(report.generations.len(), 1);
        for e in data.experts() {
            assert!(crate::tl::robustness(e, &best.formula(), 0).unwrap() > 0.0);
        }
    }

    #[test]
    fn priors_seed_population_and_runs_are_deterministic() {
        let experts: Vec<_> = (0..4).map(|i| tr(&[0.1 * i as f64, 0.5, 0.9])).collect();
        let negatives: Vec<_> = (0..6).map(|i| tr(&[0.9, 0.1 * i as f64, 0.0])).collect();
        let data = Dataset::new(experts, negatives).unwrap();
        let prior = parse_formula("F((s0 > 0.8) & (s1 < 0.9))").unwrap();
        let cfg = small_cfg();
        let (a, ra) = mine_with_report(&data, &cfg, std::slice::from_ref(&prior)).unwrap();
        let (b, rb) = mine_with_report(&data, &cfg, std::slice::from_ref(&prior)).unwrap();
        assert_eq!(a.formula(), b.formula());
        assert_eq!(ra.generations.len(), rb.generations.len());
        let mut last = 0.0;
        for g in &ra.generations {
            assert!(g.best_raw_fitness >= last);
            last = g.best_raw_fitness;
        }
        let mut buf = Vec::new();
        ra.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), ra.generations.len());
    }

    #[test]
    fn rejects_bad_selection() {
        let data = Dataset::new(vec![tr(&[0.0])], vec![tr(&[1.0])]).unwrap();
        let cfg = MiningConfig { selected_dims: Some(vec![5]), ..small_cfg() };
        assert!(matches!(mine(&data, &cfg, &[]), Err(MiningError::DimOutOfRange { .. })));
    }
}
