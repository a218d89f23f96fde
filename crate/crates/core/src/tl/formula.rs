use std::collections::BTreeMap;
use std::fmt;

use super::TlError;

/// Comparison direction of an atomic predicate.
///
/// `Lt` is `s[dim] < b` (sign +1), `Gt` is `s[dim] > b` (sign -1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cmp {
    Lt,
    Gt,
}

impl Cmp {
    pub fn sign(self) -> f64 {
        match self {
            Cmp::Lt => 1.0,
            Cmp::Gt => -1.0,
        }
    }

    pub fn flip(self) -> Cmp {
        match self {
            Cmp::Lt => Cmp::Gt,
            Cmp::Gt => Cmp::Lt,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Concrete(f64),
    Param(usize),
}

/// Axis-aligned half-space predicate over one state dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ap {
    pub dim: usize,
    pub cmp: Cmp,
    pub threshold: Threshold,
}

impl Ap {
    pub fn concrete(dim: usize, cmp: Cmp, value: f64) -> Self {
        Ap { dim, cmp, threshold: Threshold::Concrete(value) }
    }

    pub fn param(dim: usize, cmp: Cmp, id: usize) -> Self {
        Ap { dim, cmp, threshold: Threshold::Param(id) }
    }

    pub fn lt(dim: usize, value: f64) -> Self {
        Self::concrete(dim, Cmp::Lt, value)
    }

    pub fn gt(dim: usize, value: f64) -> Self {
        Self::concrete(dim, Cmp::Gt, value)
    }

    pub fn value(&self) -> Option<f64> {
        match self.threshold {
            Threshold::Concrete(v) => Some(v),
            Threshold::Param(_) => None,
        }
    }

    /// Strict Boolean truth of the predicate on a state.
    pub fn holds(&self, state: &[f64]) -> Option<bool> {
        let b = self.value()?;
        let s = state[self.dim];
        Some(match self.cmp {
            Cmp::Lt => s < b,
            Cmp::Gt => s > b,
        })
    }

    /// Identity key used when deduplicating concrete APs.
    pub fn key(&self) -> (usize, Cmp, u64) {
        let bits = match self.threshold {
            Threshold::Concrete(v) => v.to_bits(),
            Threshold::Param(id) => u64::MAX - id as u64,
        };
        (self.dim, self.cmp, bits)
    }
}

/// (p)TLTL syntax tree in positive normal form.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    False,
    Ap(Ap),
    NotAp(Ap),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
    Eventually(Box<Formula>),
    Always(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
    Release(Box<Formula>, Box<Formula>),
}

/// Node kind without children, used by the genetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    And,
    Or,
    Next,
    Eventually,
    Always,
    Until,
    Release,
}

impl Op {
    pub const ALL: [Op; 7] =
        [Op::And, Op::Or, Op::Next, Op::Eventually, Op::Always, Op::Until, Op::Release];
    pub const UNARY: [Op; 3] = [Op::Next, Op::Eventually, Op::Always];
    pub const BINARY: [Op; 4] = [Op::And, Op::Or, Op::Until, Op::Release];

    pub fn arity(self) -> usize {
        match self {
            Op::Next | Op::Eventually | Op::Always => 1,
            _ => 2,
        }
    }

    pub fn is_temporal(self) -> bool {
        !matches!(self, Op::And | Op::Or)
    }

    pub fn unary(self, child: Formula) -> Formula {
        let c = Box::new(child);
        match self {
            Op::Next => Formula::Next(c),
            Op::Eventually => Formula::Eventually(c),
            Op::Always => Formula::Always(c),
            _ => panic!("{self:?} is not unary"),
        }
    }

    pub fn binary(self, lhs: Formula, rhs: Formula) -> Formula {
        let (l, r) = (Box::new(lhs), Box::new(rhs));
        match self {
            Op::And => Formula::And(l, r),
            Op::Or => Formula::Or(l, r),
            Op::Until => Formula::Until(l, r),
            Op::Release => Formula::Release(l, r),
            _ => panic!("{self:?} is not binary"),
        }
    }
}

impl Formula {
    pub fn ap(ap: Ap) -> Self {
        Formula::Ap(ap)
    }

    pub fn and(l: Formula, r: Formula) -> Self {
        Formula::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Formula, r: Formula) -> Self {
        Formula::Or(Box::new(l), Box::new(r))
    }

    pub fn next(f: Formula) -> Self {
        Formula::Next(Box::new(f))
    }

    pub fn eventually(f: Formula) -> Self {
        Formula::Eventually(Box::new(f))
    }

    pub fn always(f: Formula) -> Self {
        Formula::Always(Box::new(f))
    }

    pub fn until(l: Formula, r: Formula) -> Self {
        Formula::Until(Box::new(l), Box::new(r))
    }

    pub fn release(l: Formula, r: Formula) -> Self {
        Formula::Release(Box::new(l), Box::new(r))
    }

    pub fn op(&self) -> Option<Op> {
        Some(match self {
            Formula::And(..) => Op::And,
            Formula::Or(..) => Op::Or,
            Formula::Next(_) => Op::Next,
            Formula::Eventually(_) => Op::Eventually,
            Formula::Always(_) => Op::Always,
            Formula::Until(..) => Op::Until,
            Formula::Release(..) => Op::Release,
            _ => return None,
        })
    }

    pub fn is_leaf(&self) -> bool {
        self.op().is_none()
    }

    pub fn is_temporal(&self) -> bool {
        self.op().is_some_and(Op::is_temporal)
    }

    pub fn children(&self) -> Vec<&Formula> {
        match self {
            Formula::True | Formula::False | Formula::Ap(_) | Formula::NotAp(_) => vec![],
            Formula::Next(c) | Formula::Eventually(c) | Formula::Always(c) => vec![c],
            Formula::And(l, r)
            | Formula::Or(l, r)
            | Formula::Until(l, r)
            | Formula::Release(l, r) => vec![l, r],
        }
    }

    fn children_mut(&mut self) -> Vec<&mut Formula> {
        match self {
            Formula::True | Formula::False | Formula::Ap(_) | Formula::NotAp(_) => vec![],
            Formula::Next(c) | Formula::Eventually(c) | Formula::Always(c) => vec![c],
            Formula::And(l, r)
            | Formula::Or(l, r)
            | Formula::Until(l, r)
            | Formula::Release(l, r) => vec![l, r],
        }
    }

    /// |V(φ)|, the number of nodes.
    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }

    /// Longest root-to-leaf path measured in nodes.
    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    /// Subtree at a preorder index.
    pub fn subtree(&self, index: usize) -> Option<&Formula> {
        fn go<'a>(f: &'a Formula, index: &mut usize) -> Option<&'a Formula> {
            if *index == 0 {
                return Some(f);
            }
            *index -= 1;
            for c in f.children() {
                if let Some(found) = go(c, index) {
                    return Some(found);
                }
            }
            None
        }
        let mut i = index;
        go(self, &mut i)
    }

    pub fn subtree_mut(&mut self, index: usize) -> Option<&mut Formula> {
        fn go<'a>(f: &'a mut Formula, index: &mut usize) -> Option<&'a mut Formula> {
            if *index == 0 {
                return Some(f);
            }
            *index -= 1;
            for c in f.children_mut() {
                if let Some(found) = go(c, index) {
                    return Some(found);
                }
            }
            None
        }
        let mut i = index;
        go(self, &mut i)
    }

    /// Returns a copy with the subtree at `index` replaced.
    pub fn replace_subtree(&self, index: usize, with: Formula) -> Formula {
        let mut out = self.clone();
        if let Some(slot) = out.subtree_mut(index) {
            *slot = with;
        }
        out
    }

    /// Preorder index of the parent of node `index`, with the child's slot.
    pub fn parent_of(&self, index: usize) -> Option<(usize, usize)> {
        fn go(f: &Formula, base: usize, target: usize) -> Option<(usize, usize)> {
            let mut next = base + 1;
            for (slot, c) in f.children().into_iter().enumerate() {
                if next == target {
                    return Some((base, slot));
                }
                let size = c.node_count();
                if target > next && target < next + size {
                    return go(c, next, target);
                }
                next += size;
            }
            None
        }
        if index == 0 {
            return None;
        }
        go(self, 0, index)
    }

    /// Visit every AP in left-to-right order (negated ones included).
    pub fn for_each_ap<'a>(&'a self, visit: &mut impl FnMut(&'a Ap)) {
        match self {
            Formula::Ap(ap) | Formula::NotAp(ap) => visit(ap),
            _ => {
                for c in self.children() {
                    c.for_each_ap(visit);
                }
            }
        }
    }

    pub fn for_each_ap_mut(&mut self, visit: &mut impl FnMut(&mut Ap)) {
        match self {
            Formula::Ap(ap) | Formula::NotAp(ap) => visit(ap),
            _ => {
                for c in self.children_mut() {
                    c.for_each_ap_mut(visit);
                }
            }
        }
    }

    pub fn max_dim(&self) -> Option<usize> {
        let mut max = None;
        self.for_each_ap(&mut |ap| max = Some(max.map_or(ap.dim, |m: usize| m.max(ap.dim))));
        max
    }

    pub fn is_concrete(&self) -> bool {
        let mut concrete = true;
        self.for_each_ap(&mut |ap| {
            if matches!(ap.threshold, Threshold::Param(_)) {
                concrete = false;
            }
        });
        concrete
    }

    /// Param ids in left-to-right tree order.
    pub fn collect_params(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_ap(&mut |ap| {
            if let Threshold::Param(id) = ap.threshold {
                out.push(id);
            }
        });
        out
    }

    /// Renumbers parameters 0..n in tree order.
    pub fn renumber_params(&self) -> Formula {
        let mut out = self.clone();
        let mut next = 0;
        out.for_each_ap_mut(&mut |ap| {
            if let Threshold::Param(_) = ap.threshold {
                ap.threshold = Threshold::Param(next);
                next += 1;
            }
        });
        out
    }

    /// Replaces every threshold (concrete or not) by a fresh parameter.
    pub fn to_skeleton(&self) -> Formula {
        let mut out = self.clone();
        let mut next = 0;
        out.for_each_ap_mut(&mut |ap| {
            ap.threshold = Threshold::Param(next);
            next += 1;
        });
        out
    }

    /// Substitutes parameter values. The keys of `theta` must match the
    /// formula's parameters exactly.
    pub fn instantiate(&self, theta: &ParamVector) -> Result<Formula, TlError> {
        let params = self.collect_params();
        for id in &params {
            if !theta.contains(*id) {
                return Err(TlError::MissingParam(*id));
            }
        }
        if let Some(extra) = theta.ids().find(|id| !params.contains(id)) {
            return Err(TlError::ExtraParam(extra));
        }
        let mut out = self.clone();
        out.for_each_ap_mut(&mut |ap| {
            if let Threshold::Param(id) = ap.threshold {
                ap.threshold = Threshold::Concrete(theta.get(id).unwrap());
            }
        });
        Ok(out)
    }

    /// True iff every AP node has at least one temporal-operator ancestor.
    pub fn is_temporally_consistent(&self) -> bool {
        fn go(f: &Formula, covered: bool) -> bool {
            match f {
                Formula::Ap(_) | Formula::NotAp(_) => covered,
                Formula::True | Formula::False => true,
                _ => {
                    let covered = covered || f.is_temporal();
                    f.children().into_iter().all(|c| go(c, covered))
                }
            }
        }
        go(self, false)
    }
}

/// Ordered parameter assignment, keyed by parameter id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamVector(BTreeMap<usize, f64>);

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pairs `values` with `ids` positionally.
    pub fn from_ids(ids: &[usize], values: &[f64]) -> Self {
        ParamVector(ids.iter().copied().zip(values.iter().copied()).collect())
    }

    pub fn insert(&mut self, id: usize, value: f64) {
        self.0.insert(id, value);
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.0.get(&id).copied()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.keys().copied()
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.values().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(usize, f64)> for ParamVector {
    fn from_iter<I: IntoIterator<Item = (usize, f64)>>(iter: I) -> Self {
        ParamVector(iter.into_iter().collect())
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::format_formula(self))
    }
}
