//! DFA compilation of concrete TLTL formulas by finite-trace progression.
//!
//! States are residual obligations in a canonical propositional normal form
//! (a set of minimal conjunctive terms over temporal/atomic subformulas), so
//! two residuals with the same canonical text are the same state.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::tl::{self, Ap, FeatureNames, Formula, Trace};

pub const DEFAULT_AP_CAP: usize = 10;
pub const DEFAULT_STATE_CAP: usize = 4096;
const TERM_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutomatonError {
    #[error("formula has unassigned parameters")]
    NonConcrete,
    #[error("formula has {found} distinct APs, cap is {cap}")]
    TooManyAps { found: usize, cap: usize },
    #[error("DFA exceeded {cap} states")]
    TooManyStates { cap: usize },
    #[error("residual normal form exceeded {TERM_CAP} terms")]
    ResidualTooLarge,
    #[error("state has {found} dims, AP needs dim {dim}")]
    DimOutOfRange { dim: usize, found: usize },
}

/// Truth assignment to a formula's distinct APs, bit i for AP i.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Valuation(pub u32);

impl Valuation {
    pub fn get(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn bits(self, width: usize) -> String {
        (0..width).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }
}

/// Distinct concrete APs of a formula in first-occurrence order.
pub fn distinct_aps(f: &Formula) -> Vec<Ap> {
    let mut out: Vec<Ap> = Vec::new();
    f.for_each_ap(&mut |ap| {
        if !out.iter().any(|a| a.key() == ap.key()) {
            out.push(*ap);
        }
    });
    out
}

/// Bit i is set iff AP i holds strictly on `state`.
pub fn label(state: &[f64], aps: &[Ap]) -> Result<Valuation, AutomatonError> {
    let mut bits = 0u32;
    for (i, ap) in aps.iter().enumerate() {
        if ap.dim >= state.len() {
            return Err(AutomatonError::DimOutOfRange { dim: ap.dim, found: state.len() });
        }
        if ap.holds(state).ok_or(AutomatonError::NonConcrete)? {
            bits |= 1 << i;
        }
    }
    Ok(Valuation(bits))
}

fn ap_index(aps: &[Ap], ap: &Ap) -> usize {
    aps.iter().position(|a| a.key() == ap.key()).expect("AP registered")
}

/// One-step progression of `f` against the letter `v`, canonicalized.
///
/// `Xφ` progresses to `φ ∧ F(true)`: the conjunct is true at any existing
/// position and false on the empty suffix, which keeps next strong at the
/// end of the trace.
pub fn progress(f: &Formula, v: Valuation, aps: &[Ap]) -> Result<Formula, AutomatonError> {
    if !f.is_concrete() {
        return Err(AutomatonError::NonConcrete);
    }
    canonicalize(&progress_raw(f, v, aps))
}

fn progress_raw(f: &Formula, v: Valuation, aps: &[Ap]) -> Formula {
    use Formula::*;
    match f {
        True => True,
        False => False,
        Ap(ap) => bool_formula(v.get(ap_index(aps, ap))),
        NotAp(ap) => bool_formula(!v.get(ap_index(aps, ap))),
        And(l, r) => Formula::and(progress_raw(l, v, aps), progress_raw(r, v, aps)),
        Or(l, r) => Formula::or(progress_raw(l, v, aps), progress_raw(r, v, aps)),
        Next(c) => Formula::and((**c).clone(), Formula::eventually(True)),
        Always(c) => Formula::and(progress_raw(c, v, aps), f.clone()),
        Eventually(c) => Formula::or(progress_raw(c, v, aps), f.clone()),
        Until(l, r) => Formula::or(
            progress_raw(r, v, aps),
            Formula::and(progress_raw(l, v, aps), f.clone()),
        ),
        Release(l, r) => Formula::and(
            progress_raw(r, v, aps),
            Formula::or(progress_raw(l, v, aps), f.clone()),
        ),
    }
}

fn bool_formula(b: bool) -> Formula {
    if b {
        Formula::True
    } else {
        Formula::False
    }
}

/// Whether a residual is satisfied by the empty remaining suffix.
pub fn empty_accepts(f: &Formula) -> bool {
    use Formula::*;
    match f {
        True => true,
        False => false,
        Ap(_) | NotAp(_) | Next(_) | Eventually(_) | Until(..) => false,
        Always(_) | Release(..) => true,
        And(l, r) => empty_accepts(l) && empty_accepts(r),
        Or(l, r) => empty_accepts(l) || empty_accepts(r),
    }
}

/// Disjunction of conjunctions of opaque atoms, keyed by canonical text.
type Dnf = BTreeSet<BTreeSet<String>>;

fn to_dnf(f: &Formula, atoms: &mut BTreeMap<String, Formula>) -> Result<Dnf, AutomatonError> {
    Ok(match f {
        Formula::True => BTreeSet::from([BTreeSet::new()]),
        Formula::False => BTreeSet::new(),
        Formula::Or(l, r) => {
            let mut out = to_dnf(l, atoms)?;
            out.extend(to_dnf(r, atoms)?);
            absorb(out)
        }
        Formula::And(l, r) => {
            let (a, b) = (to_dnf(l, atoms)?, to_dnf(r, atoms)?);
            if a.len() * b.len() > TERM_CAP {
                return Err(AutomatonError::ResidualTooLarge);
            }
            let mut out = BTreeSet::new();
            for x in &a {
                for y in &b {
                    out.insert(x.union(y).cloned().collect());
                }
            }
            absorb(out)
        }
        atom => {
            let atom = tl::simplify(atom);
            let key = atom.to_string();
            atoms.entry(key.clone()).or_insert(atom);
            BTreeSet::from([BTreeSet::from([key])])
        }
    })
}

/// Drops every term that is a strict superset of another term.
fn absorb(terms: Dnf) -> Dnf {
    let all: Vec<_> = terms.iter().cloned().collect();
    terms
        .into_iter()
        .filter(|t| !all.iter().any(|o| o != t && o.is_subset(t)))
        .collect()
}

fn from_dnf(dnf: &Dnf, atoms: &BTreeMap<String, Formula>) -> Formula {
    let mut terms = dnf.iter().map(|term| {
        let mut lits = term.iter().map(|k| atoms[k].clone());
        match lits.next() {
            None => Formula::True,
            Some(first) => lits.fold(first, Formula::and),
        }
    });
    match terms.next() {
        None => Formula::False,
        Some(first) => terms.fold(first, Formula::or),
    }
}

/// Canonical residual: simplified atoms, absorbed DNF, sorted operands.
pub fn canonicalize(f: &Formula) -> Result<Formula, AutomatonError> {
    let mut atoms = BTreeMap::new();
    let dnf = to_dnf(f, &mut atoms)?;
    Ok(from_dnf(&dnf, &atoms))
}

/// Deterministic finite automaton over valuations of a formula's APs.
#[derive(Debug, Clone)]
pub struct Dfa {
    states: Vec<Formula>,
    keys: Vec<String>,
    aps: Vec<Ap>,
    delta: Vec<usize>,
    initial: usize,
    accepting: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
pub struct DfaCaps {
    pub max_aps: usize,
    pub max_states: usize,
}

impl Default for DfaCaps {
    fn default() -> Self {
        DfaCaps { max_aps: DEFAULT_AP_CAP, max_states: DEFAULT_STATE_CAP }
    }
}

pub fn to_dfa(f: &Formula) -> Result<Dfa, AutomatonError> {
    to_dfa_with(f, DfaCaps::default())
}

pub fn to_dfa_with(f: &Formula, caps: DfaCaps) -> Result<Dfa, AutomatonError> {
    if !f.is_concrete() {
        return Err(AutomatonError::NonConcrete);
    }
    let aps = distinct_aps(f);
    if aps.len() > caps.max_aps {
        return Err(AutomatonError::TooManyAps { found: aps.len(), cap: caps.max_aps });
    }
    let letters = 1usize << aps.len();
    let q0 = canonicalize(f)?;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut states = Vec::new();
    let mut keys = Vec::new();
    let mut queue = VecDeque::new();
    let k0 = q0.to_string();
    index.insert(k0.clone(), 0);
    states.push(q0);
    keys.push(k0);
    queue.push_back(0);
    let mut delta: Vec<usize> = Vec::new();
    while let Some(q) = queue.pop_front() {
        let needed = (q + 1) * letters;
        if delta.len() < needed {
            delta.resize(needed, usize::MAX);
        }
        for v in 0..letters {
            let next = canonicalize(&progress_raw(&states[q], Valuation(v as u32), &aps))?;
            let key = next.to_string();
            let id = match index.get(&key) {
                Some(&id) => id,
                None => {
                    let id = states.len();
                    if id >= caps.max_states {
                        return Err(AutomatonError::TooManyStates { cap: caps.max_states });
                    }
                    index.insert(key.clone(), id);
                    states.push(next);
                    keys.push(key);
                    queue.push_back(id);
                    id
                }
            };
            delta[q * letters + v] = id;
        }
    }
    delta.resize(states.len() * letters, usize::MAX);
    let accepting = states.iter().map(empty_accepts).collect();
    Ok(Dfa { states, keys, aps, delta, initial: 0, accepting })
}

impl Dfa {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn aps(&self) -> &[Ap] {
        &self.aps
    }

    pub fn alphabet_size(&self) -> usize {
        1 << self.aps.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn residual(&self, q: usize) -> &Formula {
        &self.states[q]
    }

    pub fn key(&self, q: usize) -> &str {
        &self.keys[q]
    }

    pub fn is_accepting(&self, q: usize) -> bool {
        self.accepting[q]
    }

    pub fn transition(&self, q: usize, v: Valuation) -> usize {
        self.delta[q * self.alphabet_size() + v.0 as usize]
    }

    /// δ(q, L(s_next)).
    pub fn product_step(&self, q: usize, s_next: &[f64]) -> Result<usize, AutomatonError> {
        Ok(self.transition(q, label(s_next, &self.aps)?))
    }

    /// State after reset, which consumes the first trace state as a letter.
    pub fn reset(&self, s0: &[f64]) -> Result<usize, AutomatonError> {
        self.product_step(self.initial, s0)
    }

    /// Product states after each trace state: entry t has consumed s_0..s_t.
    pub fn run(&self, trace: &Trace) -> Result<Vec<usize>, AutomatonError> {
        let mut q = self.initial;
        trace
            .states()
            .map(|s| {
                q = self.product_step(q, s)?;
                Ok(q)
            })
            .collect()
    }

    pub fn accepts(&self, trace: &Trace) -> Result<bool, AutomatonError> {
        let run = self.run(trace)?;
        Ok(self.accepting[*run.last().expect("trace is non-empty")])
    }

    /// Graphviz rendering; edges are labelled with valuation bit strings.
    pub fn dump(&self, names: &FeatureNames) -> String {
        let width = self.aps.len();
        let mut out = String::from("digraph dfa {\n  rankdir=LR;\n");
        for (i, ap) in self.aps.iter().enumerate() {
            let text = tl::format_formula_with(&Formula::Ap(*ap), names);
            let _ = writeln!(out, "  // bit {i}: {text}");
        }
        out.push_str("  start [shape=point];\n");
        for q in 0..self.n_states() {
            let shape = if self.accepting[q] { "doublecircle" } else { "circle" };
            let text = tl::format_formula_with(&self.states[q], names).replace('"', "\\\"");
            let _ = writeln!(out, "  q{q} [shape={shape}, label=\"{text}\"];");
        }
        let _ = writeln!(out, "  start -> q{};", self.initial);
        for q in 0..self.n_states() {
            let mut grouped: BTreeMap<usize, Vec<String>> = BTreeMap::new();
            for v in 0..self.alphabet_size() {
                let to = self.delta[q * self.alphabet_size() + v];
                grouped.entry(to).or_default().push(Valuation(v as u32).bits(width));
            }
            for (to, labels) in grouped {
                let _ = writeln!(out, "  q{q} -> q{to} [label=\"{}\"];", labels.join(","));
            }
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tl::parse_formula;

    fn p(text: &str) -> Formula {
        parse_formula(text).unwrap()
    }

    #[test]
    fn labels_are_strict() {
        let aps = [Ap::lt(0, 1.0)];
        assert_eq!(label(&[0.5], &aps).unwrap(), Valuation(1));
        assert_eq!(label(&[1.0], &aps).unwrap(), Valuation(0));
        let aps = [Ap::lt(0, 0.2), Ap::lt(1, 1.0)];
        let v = label(&[0.3, 0.9], &aps).unwrap();
        assert!(!v.get(0) && v.get(1));
        assert!(matches!(label(&[0.3], &aps), Err(AutomatonError::DimOutOfRange { .. })));
    }

    #[test]
    fn progression_identities() {
        let g = p("G(s0 < 1)");
        let aps = distinct_aps(&g);
        assert_eq!(progress(&g, Valuation(1), &aps).unwrap(), g);
        assert_eq!(progress(&g, Valuation(0), &aps).unwrap(), Formula::False);
        let f = p("F(s0 < 1)");
        assert_eq!(progress(&f, Valuation(1), &aps).unwrap(), Formula::True);
        let u = p("(s0 < 1) U (s1 < 1)");
        let aps = distinct_aps(&u);
        assert_eq!(progress(&u, Valuation(0b01), &aps).unwrap(), u);
        assert_eq!(progress(&u, Valuation(0b10), &aps).unwrap(), Formula::True);
        assert_eq!(progress(&u, Valuation(0b00), &aps).unwrap(), Formula::False);
    }

    #[test]
    fn empty_acceptance() {
        assert!(empty_accepts(&p("G(s0 < 1)")));
        assert!(!empty_accepts(&p("F(s0 < 1)")));
        assert!(!empty_accepts(&p("G(s0 < 1) & F(s1 < 1)")));
        assert!(empty_accepts(&p("(s0 < 1) R (s1 < 1)")));
        assert!(!empty_accepts(&p("X(G(s0 < 1))")));
    }

    #[test]
    fn always_dfa() {
        let dfa = to_dfa(&p("G(s0 < 1)")).unwrap();
        assert_eq!(dfa.n_states(), 2);
        assert!(dfa.is_accepting(0));
        assert_eq!(dfa.residual(1), &Formula::False);
        assert!(!dfa.is_accepting(1));
        assert_eq!(dfa.product_step(0, &[0.5]).unwrap(), 0);
        assert_eq!(dfa.product_step(0, &[2.0]).unwrap(), 1);
        for v in 0..dfa.alphabet_size() {
            assert_eq!(dfa.transition(1, Valuation(v as u32)), 1);
        }
    }

    #[test]
    fn eventually_dfa() {
        let dfa = to_dfa(&p("F(s0 < 1)")).unwrap();
        assert_eq!(dfa.n_states(), 2);
        assert!(!dfa.is_accepting(0));
        assert_eq!(dfa.residual(1), &Formula::True);
        assert!(dfa.is_accepting(1));
        for v in 0..dfa.alphabet_size() {
            assert_eq!(dfa.transition(1, Valuation(v as u32)), 1);
        }
    }

    #[test]
    fn strong_next_through_dfa() {
        let f = p("X(G(s0 < 1))");
        let dfa = to_dfa(&f).unwrap();
        let one = Trace::new(vec![vec![0.5]]).unwrap();
        assert!(!dfa.accepts(&one).unwrap());
        let two = Trace::new(vec![vec![0.5], vec![0.5]]).unwrap();
        assert!(dfa.accepts(&two).unwrap());
    }

    #[test]
    fn caps() {
        let many = (0..11)
            .map(|d| Formula::always(Formula::Ap(Ap::lt(d, 0.0))))
            .reduce(Formula::and)
            .unwrap();
        assert!(matches!(to_dfa(&many), Err(AutomatonError::TooManyAps { found: 11, cap: 10 })));
        let f = p("F(s0 < 1) & F(s1 < 1) & F(s2 < 1)");
        let caps = DfaCaps { max_aps: 10, max_states: 3 };
        assert!(matches!(to_dfa_with(&f, caps), Err(AutomatonError::TooManyStates { cap: 3 })));
        assert!(matches!(to_dfa(&p("G(s0 < ?p0)")), Err(AutomatonError::NonConcrete)));
    }

    #[test]
    fn dump_lists_states_and_edges() {
        let dfa = to_dfa(&p("G(s0 < 1)")).unwrap();
        let text = dfa.dump(&FeatureNames::indexed());
        assert!(text.contains("q0 [shape=doublecircle, label=\"G(s0 < 1)\"]"));
        assert!(text.contains("q0 -> q1 [label=\"0\"]"));
        assert!(text.contains("q1 -> q1 [label=\"0,1\"]"));
    }
}
