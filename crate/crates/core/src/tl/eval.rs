use serde::{Deserialize, Serialize};

use super::formula::{Ap, Cmp, Formula, Threshold};
use super::TlError;

/// Robustness assigned to `true`; every value is saturated to ±this bound.
pub const B_TOP: f64 = 1e6;
/// Magnitude of the robustness assigned to `false`.
pub const B_BOT: f64 = 1e6;

/// Finite sequence of equal-length state vectors, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Trace {
    dim: usize,
    data: Vec<f64>,
}

impl Trace {
    pub fn new(states: Vec<Vec<f64>>) -> Result<Self, TlError> {
        let Some(first) = states.first() else {
            return Err(TlError::EmptyTrace);
        };
        let dim = first.len();
        let mut data = Vec::with_capacity(dim * states.len());
        for (t, s) in states.iter().enumerate() {
            if s.len() != dim {
                return Err(TlError::DimensionMismatch { expected: dim, found: s.len(), at: t });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(TlError::NonFinite { at: t });
            }
            data.extend_from_slice(s);
        }
        Ok(Trace { dim, data })
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self, TlError> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(TlError::EmptyTrace);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TlError::NonFinite { at: 0 });
        }
        Ok(Trace { dim, data })
    }

    /// Number of states, T + 1.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn value(&self, t: usize, dim: usize) -> f64 {
        self.data[t * self.dim + dim]
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.states().map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Trace {
    type Error = TlError;

    fn try_from(states: Vec<Vec<f64>>) -> Result<Self, TlError> {
        Trace::new(states)
    }
}

impl From<Trace> for Vec<Vec<f64>> {
    fn from(t: Trace) -> Self {
        t.to_vecs()
    }
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(f64),
    Ap { dim: usize, sign: f64, slot: Slot, negated: bool },
    And,
    Or,
    Next,
    Eventually,
    Always,
    Until,
    Release,
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Fixed(f64),
    Param(usize),
}

/// A formula flattened into postfix order for repeated evaluation.
///
/// Parametric thresholds are read from a slice at evaluation time, indexed
/// by position in [`Formula::collect_params`] order.
#[derive(Debug, Clone)]
pub struct Program {
    code: Vec<Instr>,
    n_params: usize,
    max_dim: Option<usize>,
}

impl Program {
    pub fn compile(f: &Formula) -> Program {
        let params = f.collect_params();
        let mut code = Vec::with_capacity(f.node_count());
        fn emit(f: &Formula, params: &[usize], code: &mut Vec<Instr>) {
            let ap_instr = |ap: &Ap, negated: bool| {
                let slot = match ap.threshold {
                    Threshold::Concrete(v) => Slot::Fixed(v),
                    Threshold::Param(id) => Slot::Param(params.iter().position(|p| *p == id).unwrap()),
                };
                Instr::Ap { dim: ap.dim, sign: ap.cmp.sign(), slot, negated }
            };
            for c in f.children() {
                emit(c, params, code);
            }
            code.push(match f {
                Formula::True => Instr::Const(B_TOP),
                Formula::False => Instr::Const(-B_BOT),
                Formula::Ap(ap) => ap_instr(ap, false),
                Formula::NotAp(ap) => ap_instr(ap, true),
                Formula::And(..) => Instr::And,
                Formula::Or(..) => Instr::Or,
                Formula::Next(_) => Instr::Next,
                Formula::Eventually(_) => Instr::Eventually,
                Formula::Always(_) => Instr::Always,
                Formula::Until(..) => Instr::Until,
                Formula::Release(..) => Instr::Release,
            });
        }
        emit(f, &params, &mut code);
        Program { code, n_params: params.len(), max_dim: f.max_dim() }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn max_dim(&self) -> Option<usize> {
        self.max_dim
    }

    /// Robustness signal over every time index of `trace`.
    pub fn signal(&self, trace: &Trace, theta: &[f64], scratch: &mut Scratch) -> Vec<f64> {
        debug_assert!(theta.len() >= self.n_params);
        let n = trace.len();
        let stack = &mut scratch.stack;
        stack.clear();
        for instr in &self.code {
            match *instr {
                Instr::Const(v) => {
                    let mut buf = scratch.pool.pop().unwrap_or_default();
                    buf.clear();
                    buf.resize(n, v);
                    stack.push(buf);
                }
                Instr::Ap { dim, sign, slot, negated } => {
                    let b = match slot {
                        Slot::Fixed(v) => v,
                        Slot::Param(i) => theta[i],
                    };
                    let neg = if negated { -1.0 } else { 1.0 };
                    let mut buf = scratch.pool.pop().unwrap_or_default();
                    buf.clear();
                    buf.extend((0..n).map(|t| {
                        (neg * sign * (b - trace.value(t, dim))).clamp(-B_BOT, B_TOP)
                    }));
                    stack.push(buf);
                }
                Instr::And | Instr::Or => {
                    let rhs = stack.pop().unwrap();
                    let lhs = stack.last_mut().unwrap();
                    if matches!(instr, Instr::And) {
                        lhs.iter_mut().zip(&rhs).for_each(|(a, b)| *a = a.min(*b));
                    } else {
                        lhs.iter_mut().zip(&rhs).for_each(|(a, b)| *a = a.max(*b));
                    }
                    scratch.pool.push(rhs);
                }
                Instr::Next => {
                    let x = stack.last_mut().unwrap();
                    x.rotate_left(1);
                    x[n - 1] = -B_BOT;
                }
                Instr::Eventually => {
                    let x = stack.last_mut().unwrap();
                    for t in (0..n - 1).rev() {
                        x[t] = x[t].max(x[t + 1]);
                    }
                }
                Instr::Always => {
                    let x = stack.last_mut().unwrap();
                    for t in (0..n - 1).rev() {
                        x[t] = x[t].min(x[t + 1]);
                    }
                }
                Instr::Until => {
                    // out[t] = max(r2[t], min(r1[t], out[t+1])), out[T+1] = -B
                    let r2 = stack.pop().unwrap();
                    let r1 = stack.last_mut().unwrap();
                    let mut acc = -B_BOT;
                    for t in (0..n).rev() {
                        acc = r2[t].max(r1[t].min(acc));
                        r1[t] = acc;
                    }
                    scratch.pool.push(r2);
                }
                Instr::Release => {
                    // out[t] = min(r2[t], max(r1[t], out[t+1])), out[T+1] = +B
                    let r2 = stack.pop().unwrap();
                    let r1 = stack.last_mut().unwrap();
                    let mut acc = B_TOP;
                    for t in (0..n).rev() {
                        acc = r2[t].min(r1[t].max(acc));
                        r1[t] = acc;
                    }
                    scratch.pool.push(r2);
                }
            }
        }
        let out = stack.pop().unwrap();
        debug_assert!(stack.is_empty());
        out
    }

    /// Robustness at time 0, recycling the signal buffer.
    pub fn rho0(&self, trace: &Trace, theta: &[f64], scratch: &mut Scratch) -> f64 {
        let sig = self.signal(trace, theta, scratch);
        let v = sig[0];
        scratch.pool.push(sig);
        v
    }
}

/// Reusable buffers for [`Program`] evaluation.
#[derive(Debug, Default)]
pub struct Scratch {
    stack: Vec<Vec<f64>>,
    pool: Vec<Vec<f64>>,
}

fn check_concrete(trace: &Trace, f: &Formula) -> Result<(), TlError> {
    if !f.is_concrete() {
        return Err(TlError::NonConcrete);
    }
    if let Some(d) = f.max_dim() {
        if d >= trace.dim() {
            return Err(TlError::DimensionMismatch { expected: trace.dim(), found: d + 1, at: 0 });
        }
    }
    Ok(())
}

/// Quantitative robustness of `f` on `trace` at time `t`.
pub fn robustness(trace: &Trace, f: &Formula, t: usize) -> Result<f64, TlError> {
    check_concrete(trace, f)?;
    if t >= trace.len() {
        return Err(TlError::TimeOutOfRange { t, len: trace.len() });
    }
    let sig = Program::compile(f).signal(trace, &[], &mut Scratch::default());
    Ok(sig[t])
}

/// Robustness signal at every time index.
pub fn robustness_signal(trace: &Trace, f: &Formula) -> Result<Vec<f64>, TlError> {
    check_concrete(trace, f)?;
    Ok(Program::compile(f).signal(trace, &[], &mut Scratch::default()))
}

/// `ρ(trace, f, 0) > 0`.
pub fn satisfies(trace: &Trace, f: &Formula) -> Result<bool, TlError> {
    Ok(robustness(trace, f, 0)? > 0.0)
}

/// Boolean finite-trace semantics by direct recursion over time indices.
///
/// Independent of the robustness code path; used as a cross-check.
pub fn boolean_eval(trace: &Trace, f: &Formula, t: usize) -> Result<bool, TlError> {
    check_concrete(trace, f)?;
    if t >= trace.len() {
        return Err(TlError::TimeOutOfRange { t, len: trace.len() });
    }
    Ok(holds(trace, f, t))
}

fn holds(trace: &Trace, f: &Formula, t: usize) -> bool {
    let last = trace.len() - 1;
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Ap(ap) => ap_holds(trace, ap, t),
        Formula::NotAp(ap) => !ap_holds(trace, ap, t),
        Formula::And(l, r) => holds(trace, l, t) && holds(trace, r, t),
        Formula::Or(l, r) => holds(trace, l, t) || holds(trace, r, t),
        Formula::Next(c) => t < last && holds(trace, c, t + 1),
        Formula::Eventually(c) => (t..=last).any(|k| holds(trace, c, k)),
        Formula::Always(c) => (t..=last).all(|k| holds(trace, c, k)),
        Formula::Until(l, r) => {
            (t..=last).any(|k| holds(trace, r, k) && (t..k).all(|j| holds(trace, l, j)))
        }
        Formula::Release(l, r) => {
            (t..=last).all(|k| holds(trace, r, k) || (t..k).any(|j| holds(trace, l, j)))
        }
    }
}

fn ap_holds(trace: &Trace, ap: &Ap, t: usize) -> bool {
    let s = trace.value(t, ap.dim);
    let b = ap.value().expect("concrete");
    match ap.cmp {
        Cmp::Lt => s < b,
        Cmp::Gt => s > b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tl::parse_formula;

    fn tr(rows: &[&[f64]]) -> Trace {
        Trace::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn single_ap() {
        let f = parse_formula("s0 < 1").unwrap();
        assert_eq!(robustness(&tr(&[&[0.5]]), &f, 0).unwrap(), 0.5);
        assert!(satisfies(&tr(&[&[0.5]]), &f).unwrap());
        assert!(!satisfies(&tr(&[&[1.0]]), &f).unwrap());
    }

    #[test]
    fn always_is_min() {
        let f = parse_formula("G(s0 < 1)").unwrap();
        let t = tr(&[&[0.5], &[2.0], &[0.1]]);
        assert_eq!(robustness(&t, &f, 0).unwrap(), -1.0);
        assert_eq!(robustness(&t, &f, 2).unwrap(), 0.9);
    }

    #[test]
    fn strong_next_at_end() {
        let f = parse_formula("X(s0 < 1)").unwrap();
        let t = tr(&[&[0.5]]);
        assert_eq!(robustness(&t, &f, 0).unwrap(), -B_BOT);
        assert!(!boolean_eval(&t, &f, 0).unwrap());
    }

    #[test]
    fn boolean_examples() {
        let ev = parse_formula("F(s0 > 1)").unwrap();
        assert!(boolean_eval(&tr(&[&[0.5], &[2.0]]), &ev, 0).unwrap());
        let u = parse_formula("(s0 < 1) U (s0 < 0.1)").unwrap();
        assert!(boolean_eval(&tr(&[&[0.5], &[0.5], &[0.0]]), &u, 0).unwrap());
        assert!(!boolean_eval(&tr(&[&[0.5], &[2.0], &[0.0]]), &u, 0).unwrap());
    }

    #[test]
    fn until_matches_max_min_definition() {
        let u = parse_formula("(s0 < 1) U (s1 < 0)").unwrap();
        let t = tr(&[&[0.2, 0.5], &[0.7, 0.3], &[0.4, -0.2], &[3.0, -1.0]]);
        let r1: Vec<f64> = (0..4).map(|k| 1.0 - t.value(k, 0)).collect();
        let r2: Vec<f64> = (0..4).map(|k| -t.value(k, 1)).collect();
        let brute = (0..4)
            .map(|k| {
                let inner = (0..k).map(|j| r1[j]).fold(B_TOP, f64::min);
                r2[k].min(inner)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(robustness(&t, &u, 0).unwrap(), brute);
    }

    #[test]
    fn errors() {
        let t = tr(&[&[0.5]]);
        let f = parse_formula("s0 < 1").unwrap();
        assert!(matches!(robustness(&t, &f, 1), Err(TlError::TimeOutOfRange { .. })));
        let p = parse_formula("s0 < ?p0").unwrap();
        assert!(matches!(robustness(&t, &p, 0), Err(TlError::NonConcrete)));
        let wide = parse_formula("s3 < 1").unwrap();
        assert!(robustness(&t, &wide, 0).is_err());
        assert!(Trace::new(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(Trace::new(vec![]).is_err());
        assert!(Trace::new(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn constants_saturate() {
        let t = tr(&[&[0.0], &[0.0]]);
        assert_eq!(robustness(&t, &Formula::True, 0).unwrap(), B_TOP);
        assert_eq!(robustness(&t, &Formula::False, 1).unwrap(), -B_BOT);
        let huge = parse_formula("s0 < 1e12").unwrap();
        assert_eq!(robustness(&t, &huge, 0).unwrap(), B_TOP);
    }
}
