//! Random formulas and traces for property tests and benchmarks.

use rand::Rng;

use super::eval::Trace;
use super::formula::{Ap, Cmp, Formula, Op};

/// Random concrete formula of depth at most `max_depth` over `kappa` dims,
/// with thresholds uniform in `[-1, 1]`.
pub fn random_formula<R: Rng + ?Sized>(rng: &mut R, max_depth: usize, kappa: usize) -> Formula {
    assert!(max_depth >= 1 && kappa >= 1);
    if max_depth == 1 || rng.random_bool(0.25) {
        return random_leaf(rng, kappa);
    }
    let op = Op::ALL[rng.random_range(0..Op::ALL.len())];
    if op.arity() == 1 {
        op.unary(random_formula(rng, max_depth - 1, kappa))
    } else {
        op.binary(
            random_formula(rng, max_depth - 1, kappa),
            random_formula(rng, max_depth - 1, kappa),
        )
    }
}

fn random_leaf<R: Rng + ?Sized>(rng: &mut R, kappa: usize) -> Formula {
    let roll: f64 = rng.random();
    let mut ap = || {
        let dim = rng.random_range(0..kappa);
        let cmp = if rng.random_bool(0.5) { Cmp::Lt } else { Cmp::Gt };
        Ap::concrete(dim, cmp, rng.random_range(-1.0..1.0))
    };
    if roll < 0.04 {
        Formula::True
    } else if roll < 0.08 {
        Formula::False
    } else if roll < 0.2 {
        Formula::NotAp(ap())
    } else {
        Formula::Ap(ap())
    }
}

/// Random parametric formula with distinct, tree-ordered parameter ids.
pub fn random_parametric_formula<R: Rng + ?Sized>(
    rng: &mut R,
    max_depth: usize,
    kappa: usize,
) -> Formula {
    random_formula(rng, max_depth, kappa).to_skeleton()
}

/// Random trace with values uniform in `[-1.25, 1.25]`.
pub fn random_trace<R: Rng + ?Sized>(rng: &mut R, len: usize, kappa: usize) -> Trace {
    let states = (0..len)
        .map(|_| (0..kappa).map(|_| rng.random_range(-1.25..1.25)).collect())
        .collect();
    Trace::new(states).expect("well-formed random trace")
}
