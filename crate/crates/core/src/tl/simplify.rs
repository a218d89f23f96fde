use super::formula::Formula;

/// Applies the fixed rewrite set bottom-up until nothing changes:
/// `GG=G`, `FF=F`, `x&x=x`, `x|x=x`, `x&true=x`, `x|false=x`,
/// `x&false=false`, `x|true=true`, `x U x=x`, `x R x=x`.
///
/// Every rule is an exact robustness identity, and no rule adds nodes.
pub fn simplify(f: &Formula) -> Formula {
    let mut cur = step(f);
    loop {
        let next = step(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn step(f: &Formula) -> Formula {
    use Formula::*;
    match f {
        True | False | Ap(_) | NotAp(_) => f.clone(),
        Next(c) => Formula::next(step(c)),
        Always(c) => match step(c) {
            inner @ Always(_) => inner,
            inner => Formula::always(inner),
        },
        Eventually(c) => match step(c) {
            inner @ Eventually(_) => inner,
            inner => Formula::eventually(inner),
        },
        And(l, r) => match (step(l), step(r)) {
            (False, _) | (_, False) => False,
            (True, x) | (x, True) => x,
            (a, b) if a == b => a,
            (a, b) => Formula::and(a, b),
        },
        Or(l, r) => match (step(l), step(r)) {
            (True, _) | (_, True) => True,
            (False, x) | (x, False) => x,
            (a, b) if a == b => a,
            (a, b) => Formula::or(a, b),
        },
        Until(l, r) => match (step(l), step(r)) {
            (a, b) if a == b => a,
            (a, b) => Formula::until(a, b),
        },
        Release(l, r) => match (step(l), step(r)) {
            (a, b) if a == b => a,
            (a, b) => Formula::release(a, b),
        },
    }
}
