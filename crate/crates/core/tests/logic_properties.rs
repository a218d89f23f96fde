use ilcl::automaton::{to_dfa, DfaCaps};
use ilcl::tl::random::{random_formula, random_parametric_formula, random_trace};
use ilcl::tl::{
    boolean_eval, format_formula, parse_formula, robustness, satisfies, simplify, Ap, Cmp,
    Formula, Trace,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn format_parse_round_trip(seed in any::<u64>(), depth in 1usize..5, param in any::<bool>()) {
        let mut rng = seeded(seed);
        let f = if param {
            random_parametric_formula(&mut rng, depth, 4)
        } else {
            random_formula(&mut rng, depth, 4)
        };
        let text = format_formula(&f);
        prop_assert_eq!(parse_formula(&text).unwrap(), f);
    }

    #[test]
    fn robustness_sign_matches_boolean(seed in any::<u64>(), len in 1usize..9) {
        let mut rng = seeded(seed);
        let f = random_formula(&mut rng, 3, 3);
        let trace = random_trace(&mut rng, len, 3);
        for t in 0..len {
            let rho = robustness(&trace, &f, t).unwrap();
            if rho.abs() > 1e-9 {
                prop_assert_eq!(rho > 0.0, boolean_eval(&trace, &f, t).unwrap());
            }
        }
    }

    #[test]
    fn simplify_preserves_robustness(seed in any::<u64>(), len in 1usize..9) {
        let mut rng = seeded(seed);
        let f = random_formula(&mut rng, 4, 3);
        let g = simplify(&f);
        prop_assert!(g.node_count() <= f.node_count());
        let trace = random_trace(&mut rng, len, 3);
        for t in 0..len {
            let a = robustness(&trace, &f, t).unwrap();
            let b = robustness(&trace, &g, t).unwrap();
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}: {} != {}", f, g, a, b);
        }
    }

    #[test]
    fn and_or_are_min_max(seed in any::<u64>(), len in 1usize..9) {
        let mut rng = seeded(seed);
        let (a, b) = (random_formula(&mut rng, 3, 2), random_formula(&mut rng, 3, 2));
        let trace = random_trace(&mut rng, len, 2);
        let ra = robustness(&trace, &a, 0).unwrap();
        let rb = robustness(&trace, &b, 0).unwrap();
        prop_assert_eq!(robustness(&trace, &Formula::and(a.clone(), b.clone()), 0).unwrap(), ra.min(rb));
        prop_assert_eq!(robustness(&trace, &Formula::or(a, b), 0).unwrap(), ra.max(rb));
    }

    #[test]
    fn ap_monotone_in_threshold(
        seed in any::<u64>(),
        lo in -2.0f64..2.0,
        delta in 0.0f64..2.0,
    ) {
        let mut rng = seeded(seed);
        let trace = random_trace(&mut rng, 6, 1);
        for (cmp, increasing) in [(Cmp::Lt, true), (Cmp::Gt, false)] {
            let f = |b| Formula::always(Formula::Ap(Ap::concrete(0, cmp, b)));
            let r_lo = robustness(&trace, &f(lo), 0).unwrap();
            let r_hi = robustness(&trace, &f(lo + delta), 0).unwrap();
            if increasing {
                prop_assert!(r_hi >= r_lo);
            } else {
                prop_assert!(r_hi <= r_lo);
            }
        }
    }

    #[test]
    fn dfa_agrees_with_satisfaction(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let f = random_formula(&mut rng, 3, 2);
        let dfa = to_dfa(&f).unwrap();
        for _ in 0..20 {
            let len = 1 + (rand::Rng::random_range(&mut rng, 0..8usize));
            let trace = random_trace(&mut rng, len, 2);
            let rho = robustness(&trace, &f, 0).unwrap();
            if rho.abs() > 1e-9 {
                prop_assert_eq!(dfa.accepts(&trace).unwrap(), satisfies(&trace, &f).unwrap(), "{}", f);
            }
        }
    }

    #[test]
    fn dfa_is_total_and_canonical(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let f = random_formula(&mut rng, 3, 3);
        let dfa = to_dfa(&f).unwrap();
        let letters = dfa.alphabet_size();
        for q in 0..dfa.n_states() {
            for v in 0..letters {
                let to = dfa.transition(q, ilcl::automaton::Valuation(v as u32));
                prop_assert!(to < dfa.n_states());
            }
            match dfa.residual(q) {
                Formula::True => {
                    prop_assert!(dfa.is_accepting(q));
                    for v in 0..letters {
                        prop_assert_eq!(dfa.transition(q, ilcl::automaton::Valuation(v as u32)), q);
                    }
                }
                Formula::False => {
                    for v in 0..letters {
                        prop_assert_eq!(dfa.transition(q, ilcl::automaton::Valuation(v as u32)), q);
                    }
                }
                _ => {}
            }
        }
        let again = to_dfa(&f).unwrap();
        prop_assert_eq!(again.n_states(), dfa.n_states());
        for q in 0..dfa.n_states() {
            prop_assert_eq!(again.key(q), dfa.key(q));
        }
    }
}

#[test]
fn worked_dfa_examples() {
    let caps = DfaCaps::default();
    assert_eq!(caps.max_aps, 10);
    let f = parse_formula("(s0 < 1) U (s0 < 0.1)").unwrap();
    let dfa = to_dfa(&f).unwrap();
    let t = Trace::new(vec![vec![0.5], vec![0.5], vec![0.0]]).unwrap();
    assert!(dfa.accepts(&t).unwrap());
    let run = dfa.run(&t).unwrap();
    assert_eq!(run.len(), 3);
    assert!(dfa.is_accepting(run[2]));
}
