//! Tree construction and genetic operators.

use rand::Rng;

use super::MiningError;
use crate::tl::{simplify, Ap, Cmp, Formula, Op};

/// Every single-operator tree over `selected_dims`: ○μ, ◇μ, □μ for each of
/// the 2κ' parametric APs, and μ1 U μ2, μ1 R μ2 for each ordered pair.
pub fn basis_trees(kappa: usize, selected_dims: &[usize]) -> Result<Vec<Formula>, MiningError> {
    if selected_dims.is_empty() {
        return Err(MiningError::EmptySelection);
    }
    if let Some(&dim) = selected_dims.iter().find(|d| **d >= kappa) {
        return Err(MiningError::DimOutOfRange { dim, kappa });
    }
    let paps: Vec<(usize, Cmp)> =
        selected_dims.iter().flat_map(|&d| [(d, Cmp::Lt), (d, Cmp::Gt)]).collect();
    let mut out = Vec::with_capacity(6 * selected_dims.len() + 8 * selected_dims.len().pow(2));
    for op in Op::UNARY {
        for &(d, c) in &paps {
            out.push(op.unary(Formula::Ap(Ap::param(d, c, 0))));
        }
    }
    for op in [Op::Until, Op::Release] {
        for &(d1, c1) in &paps {
            for &(d2, c2) in &paps {
                out.push(op.binary(
                    Formula::Ap(Ap::param(d1, c1, 0)),
                    Formula::Ap(Ap::param(d2, c2, 1)),
                ));
            }
        }
    }
    Ok(out)
}

/// A parametric AP over a random dimension and direction.
pub fn random_pap<R: Rng + ?Sized>(dims: &[usize], id: usize, rng: &mut R) -> Formula {
    let d = dims[rng.random_range(0..dims.len())];
    let c = if rng.random_bool(0.5) { Cmp::Lt } else { Cmp::Gt };
    Formula::Ap(Ap::param(d, c, id))
}

fn dims_of(f: &Formula) -> Vec<usize> {
    let mut dims = Vec::new();
    f.for_each_ap(&mut |ap| {
        if !dims.contains(&ap.dim) {
            dims.push(ap.dim);
        }
    });
    dims.sort_unstable();
    dims
}

fn next_param(f: &Formula) -> usize {
    f.collect_params().into_iter().max().map_or(0, |m| m + 1)
}

/// Inserts a random operator as the parent of a random node. A binary
/// operator receives a fresh pAP as its other child, on a random side.
/// The result is neither simplified nor repaired.
pub fn mutation_a<R: Rng + ?Sized>(f: &Formula, dims: &[usize], rng: &mut R) -> Formula {
    let idx = rng.random_range(0..f.node_count());
    let target = f.subtree(idx).expect("index in range").clone();
    let op = Op::ALL[rng.random_range(0..Op::ALL.len())];
    let wrapped = if op.arity() == 1 {
        op.unary(target)
    } else {
        let fresh = random_pap(dims, next_param(f), rng);
        if rng.random_bool(0.5) {
            op.binary(target, fresh)
        } else {
            op.binary(fresh, target)
        }
    };
    f.replace_subtree(idx, wrapped)
}

/// Replaces a random node by another of its class, or deletes a random
/// non-root subtree. Deleting below a binary node promotes the sibling;
/// deleting below a unary node removes that operator.
pub fn mutation_r<R: Rng + ?Sized>(f: &Formula, dims: &[usize], rng: &mut R) -> Formula {
    let n = f.node_count();
    if n > 1 && rng.random_bool(0.5) {
        let idx = rng.random_range(1..n);
        let (parent, slot) = f.parent_of(idx).expect("non-root node has a parent");
        let p = f.subtree(parent).expect("parent exists");
        let survivor = match p.children().as_slice() {
            [only] => (*only).clone(),
            [l, r] => if slot == 0 { (*r).clone() } else { (*l).clone() },
            _ => unreachable!("leaves have no children"),
        };
        return f.replace_subtree(parent, survivor);
    }
    let idx = rng.random_range(0..n);
    let node = f.subtree(idx).expect("index in range");
    let replacement = match node {
        Formula::True => Formula::False,
        Formula::False => Formula::True,
        Formula::Ap(ap) | Formula::NotAp(ap) => {
            let id = match ap.threshold {
                crate::tl::Threshold::Param(id) => id,
                crate::tl::Threshold::Concrete(_) => next_param(f),
            };
            let options = dims.len() * 2;
            loop {
                let cand = random_pap(dims, id, rng);
                let same = matches!(&cand, Formula::Ap(a) if a.dim == ap.dim && a.cmp == ap.cmp);
                if options == 1 || !same || matches!(node, Formula::NotAp(_)) {
                    break cand;
                }
            }
        }
        _ => {
            let op = node.op().expect("operator node");
            let class: &[Op] = if op.arity() == 1 { &Op::UNARY } else { &Op::BINARY };
            let others: Vec<Op> = class.iter().copied().filter(|o| *o != op).collect();
            let new_op = others[rng.random_range(0..others.len())];
            let kids: Vec<Formula> = node.children().into_iter().cloned().collect();
            match kids.as_slice() {
                [c] => new_op.unary(c.clone()),
                [l, r] => new_op.binary(l.clone(), r.clone()),
                _ => unreachable!(),
            }
        }
    };
    f.replace_subtree(idx, replacement)
}

/// Swaps a uniformly chosen subtree of `a` with one of `b`; both children
/// are simplified and their parameters renumbered.
pub fn crossover<R: Rng + ?Sized>(a: &Formula, b: &Formula, rng: &mut R) -> (Formula, Formula) {
    let i = rng.random_range(0..a.node_count());
    let j = rng.random_range(0..b.node_count());
    let sa = a.subtree(i).expect("index in range").clone();
    let sb = b.subtree(j).expect("index in range").clone();
    let ca = a.replace_subtree(i, sb);
    let cb = b.replace_subtree(j, sa);
    (simplify(&ca).renumber_params(), simplify(&cb).renumber_params())
}

/// Wraps every AP lacking a temporal ancestor in □.
pub fn repair_consistency(f: &Formula) -> Formula {
    fn go(f: &Formula, covered: bool) -> Formula {
        match f {
            Formula::Ap(_) | Formula::NotAp(_) if !covered => Formula::always(f.clone()),
            Formula::Ap(_) | Formula::NotAp(_) | Formula::True | Formula::False => f.clone(),
            _ => {
                let covered = covered || f.is_temporal();
                let kids: Vec<Formula> = f.children().into_iter().map(|c| go(c, covered)).collect();
                let op = f.op().expect("operator node");
                match kids.as_slice() {
                    [c] => op.unary(c.clone()),
                    [l, r] => op.binary(l.clone(), r.clone()),
                    _ => unreachable!(),
                }
            }
        }
    }
    go(f, false)
}

/// Outcome of cleaning an offspring for admission to the population.
#[derive(Debug, Clone, PartialEq)]
pub enum Offspring {
    Valid(Formula),
    Repaired(Formula),
    Rejected,
}

impl Offspring {
    pub fn formula(&self) -> Option<&Formula> {
        match self {
            Offspring::Valid(f) | Offspring::Repaired(f) => Some(f),
            Offspring::Rejected => None,
        }
    }
}

/// Simplifies, renumbers, and checks temporal consistency with one repair
/// attempt. Trees without any AP are rejected.
pub fn finalize_offspring(f: &Formula) -> Offspring {
    let s = simplify(f).renumber_params();
    let mut has_ap = false;
    s.for_each_ap(&mut |_| has_ap = true);
    if !has_ap {
        return Offspring::Rejected;
    }
    if s.is_temporally_consistent() {
        return Offspring::Valid(s);
    }
    let r = simplify(&repair_consistency(&s)).renumber_params();
    if r.is_temporally_consistent() {
        Offspring::Repaired(r)
    } else {
        Offspring::Rejected
    }
}

/// Grows a random basis tree by repeated operator injection until its depth
/// exceeds `max_depth`, stopping early with probability `stop_prob` before
/// each injection.
pub fn random_tree<R: Rng + ?Sized>(
    basis: &[Formula],
    max_depth: usize,
    stop_prob: f64,
    rng: &mut R,
) -> Formula {
    assert!(!basis.is_empty(), "basis must be non-empty");
    let mut dims = Vec::new();
    for b in basis {
        for d in dims_of(b) {
            if !dims.contains(&d) {
                dims.push(d);
            }
        }
    }
    let mut last = None;
    for _ in 0..100 {
        let seed_tree = &basis[rng.random_range(0..basis.len())];
        let mut tree = seed_tree.clone();
        loop {
            if rng.random_bool(stop_prob) {
                break;
            }
            tree = mutation_a(&tree, &dims, rng);
            if tree.depth() > max_depth {
                break;
            }
        }
        if let Some(f) = finalize_offspring(&tree).formula() {
            if f.depth() <= max_depth + 1 {
                return f.clone();
            }
        }
        last = Some(seed_tree.renumber_params());
    }
    last.expect("at least one attempt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tl::parse_formula;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(s: &str) -> Formula {
        parse_formula(s).unwrap()
    }

    #[test]
    fn basis_counts() {
        assert_eq!(basis_trees(1, &[0]).unwrap().len(), 14);
        assert_eq!(basis_trees(3, &[0, 2]).unwrap().len(), 44);
        assert!(basis_trees(3, &[0, 1, 2]).unwrap().iter().all(|f| f.is_temporally_consistent()));
        assert_eq!(basis_trees(3, &[]), Err(MiningError::EmptySelection));
        assert_eq!(basis_trees(2, &[2]), Err(MiningError::DimOutOfRange { dim: 2, kappa: 2 }));
    }

    #[test]
    fn mutation_a_grows_by_arity() {
        let f = p("(s0 < ?p0) U (s1 > ?p1)");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let g = mutation_a(&f, &[0, 1], &mut rng);
            let grown = g.node_count() - f.node_count();
            assert!(grown == 1 || grown == 2);
            let params = g.collect_params();
            let mut uniq = params.clone();
            uniq.dedup();
            assert_eq!(uniq.len(), params.len());
        }
    }

    #[test]
    fn mutation_a_can_wrap_right_operand() {
        let f = p("(s0 < ?p0) U (s1 > ?p1)");
        let want = p("(s0 < ?p0) U (G(s1 > ?p1))");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..500).any(|_| mutation_a(&f, &[0, 1], &mut rng) == want));
    }

    #[test]
    fn mutation_r_delete_rules() {
        let f = p("G((s0 < ?p0) & (s1 > ?p1))");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..400 {
            let g = mutation_r(&f, &[0, 1], &mut rng);
            seen.insert(g.to_string());
        }
        assert!(seen.contains("G(s0 < ?p0)"));
        assert!(seen.contains("G(s1 > ?p1)"));
        assert!(seen.contains("(s0 < ?p0) & (s1 > ?p1)"));
        assert!(seen.contains("G((s0 < ?p0) | (s1 > ?p1))"));
    }

    #[test]
    fn mutation_r_single_ap() {
        let f = p("s0 < ?p0");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g = mutation_r(&f, &[0, 1], &mut rng);
            assert!(matches!(g, Formula::Ap(_)));
            assert_ne!(g, f);
        }
    }

    #[test]
    fn crossover_root_swap() {
        let a = p("G(s0 < ?p0)");
        let b = p("(s1 > ?p0) U (s0 < ?p1)");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut found = false;
        for _ in 0..400 {
            if crossover(&a, &b, &mut rng) == (b.clone(), a.clone()) {
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn repair_wraps_uncovered_aps() {
        let f = p("(s0 < ?p0) & (G(s1 > ?p1))");
        assert_eq!(finalize_offspring(&f), Offspring::Repaired(p("(G(s0 < ?p0)) & (G(s1 > ?p1))")));
        assert_eq!(finalize_offspring(&p("true")), Offspring::Rejected);
        assert_eq!(finalize_offspring(&p("F(s0 < ?p3)")), Offspring::Valid(p("F(s0 < ?p0)")));
    }

    #[test]
    fn random_tree_depth_and_determinism() {
        let basis = basis_trees(2, &[0, 1]).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..1000).map(|_| random_tree(&basis, 3, 0.1, &mut rng)).collect::<Vec<_>>()
        };
        let a = draw(5);
        assert_eq!(a, draw(5));
        for f in &a {
            assert!(f.depth() <= 4, "{f}");
            assert!(f.is_temporally_consistent());
            assert_eq!(*f, simplify(f));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let f = random_tree(&basis, 3, 1.0, &mut rng);
            assert!(basis.contains(&f));
        }
    }
}
