//! Text syntax for (p)TLTL formulas.
//!
//! ```text
//! formula := or
//! or      := and ('|' and)*
//! and     := bin ('&' bin)*
//! bin     := unary (('U' | 'R') bin)?
//! unary   := ('G' | 'F' | 'X') unary | '!' unary | primary
//! primary := 'true' | 'false' | '(' formula ')' | atom
//! atom    := NAME ('<' | '>') (NUMBER | '?p' INT)
//! ```
//!
//! `!` may only be applied to an atom. Feature names resolve through a
//! [`FeatureNames`] table; the default table accepts `s0`, `s1`, ...

use super::formula::{Ap, Cmp, Formula, Threshold};
use super::TlError;

/// Maps feature names to state dimensions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureNames {
    names: Option<Vec<String>>,
}

impl FeatureNames {
    /// The `sN` naming scheme with no dimension bound.
    pub fn indexed() -> Self {
        FeatureNames { names: None }
    }

    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        FeatureNames { names: Some(names.into_iter().map(Into::into).collect()) }
    }

    pub fn len(&self) -> Option<usize> {
        self.names.as_ref().map(Vec::len)
    }

    pub fn resolve(&self, name: &str) -> Option<usize> {
        match &self.names {
            Some(names) => names.iter().position(|n| n == name),
            None => {
                let digits = name.strip_prefix('s')?;
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                digits.parse().ok()
            }
        }
    }

    pub fn name(&self, dim: usize) -> String {
        match &self.names {
            Some(names) if dim < names.len() => names[dim].clone(),
            _ => format!("s{dim}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Num(f64),
    Param(usize),
    LParen,
    RParen,
    Lt,
    Gt,
    And,
    Or,
    Not,
    True,
    False,
    G,
    F,
    X,
    U,
    R,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, TlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b'<' => out.push((Tok::Lt, start)),
            b'>' => out.push((Tok::Gt, start)),
            b'&' => out.push((Tok::And, start)),
            b'|' => out.push((Tok::Or, start)),
            b'!' => out.push((Tok::Not, start)),
            b'?' => {
                if bytes.get(i + 1) != Some(&b'p') {
                    return Err(TlError::syntax(start, "expected '?p<id>'"));
                }
                let mut j = i + 2;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                let id = text[i + 2..j]
                    .parse()
                    .map_err(|_| TlError::syntax(start, "malformed parameter id"))?;
                out.push((Tok::Param(id), start));
                i = j;
                continue;
            }
            b'-' | b'+' | b'.' | b'0'..=b'9' => {
                let mut j = i + 1;
                while j < bytes.len() {
                    let d = bytes[j];
                    let exp_sign = (d == b'-' || d == b'+') && matches!(bytes[j - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                        j += 1;
                    } else {
                        break;
                    }
                }
                let v: f64 = text[i..j]
                    .parse()
                    .map_err(|_| TlError::syntax(start, format!("malformed number '{}'", &text[i..j])))?;
                if !v.is_finite() {
                    return Err(TlError::syntax(start, "threshold must be finite"));
                }
                out.push((Tok::Num(v), start));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                let word = &text[i..j];
                let tok = match word {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "G" => Tok::G,
                    "F" => Tok::F,
                    "X" => Tok::X,
                    "U" => Tok::U,
                    "R" => Tok::R,
                    _ => Tok::Name(word.to_string()),
                };
                out.push((tok, start));
                i = j;
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap();
                return Err(TlError::syntax(start, format!("unexpected character '{ch}'")));
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    names: &'a FeatureNames,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), TlError> {
        let at = self.offset();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(TlError::syntax(at, format!("expected {what}"))),
        }
    }

    fn or(&mut self) -> Result<Formula, TlError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.bump();
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, TlError> {
        let mut lhs = self.bin()?;
        while self.peek() == Some(&Tok::And) {
            self.bump();
            lhs = Formula::and(lhs, self.bin()?);
        }
        Ok(lhs)
    }

    fn bin(&mut self) -> Result<Formula, TlError> {
        let lhs = self.unary()?;
        match self.peek() {
            Some(Tok::U) => {
                self.bump();
                Ok(Formula::until(lhs, self.bin()?))
            }
            Some(Tok::R) => {
                self.bump();
                Ok(Formula::release(lhs, self.bin()?))
            }
            _ => Ok(lhs),
        }
    }

    fn unary(&mut self) -> Result<Formula, TlError> {
        let at = self.offset();
        match self.peek() {
            Some(Tok::G) => {
                self.bump();
                Ok(Formula::always(self.unary()?))
            }
            Some(Tok::F) => {
                self.bump();
                Ok(Formula::eventually(self.unary()?))
            }
            Some(Tok::X) => {
                self.bump();
                Ok(Formula::next(self.unary()?))
            }
            Some(Tok::Not) => {
                self.bump();
                match self.unary()? {
                    Formula::Ap(ap) => Ok(Formula::NotAp(ap)),
                    _ => Err(TlError::NegationNotOnAp { offset: at }),
                }
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula, TlError> {
        let at = self.offset();
        match self.bump() {
            Some(Tok::True) => Ok(Formula::True),
            Some(Tok::False) => Ok(Formula::False),
            Some(Tok::LParen) => {
                let inner = self.or()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Some(Tok::Name(name)) => {
                let dim = self
                    .names
                    .resolve(&name)
                    .ok_or(TlError::UnknownFeature { name: name.clone(), offset: at })?;
                let cmp_at = self.offset();
                let cmp = match self.bump() {
                    Some(Tok::Lt) => Cmp::Lt,
                    Some(Tok::Gt) => Cmp::Gt,
                    _ => return Err(TlError::syntax(cmp_at, "expected '<' or '>'")),
                };
                let th_at = self.offset();
                let threshold = match self.bump() {
                    Some(Tok::Num(v)) => Threshold::Concrete(v),
                    Some(Tok::Param(id)) => Threshold::Param(id),
                    _ => return Err(TlError::syntax(th_at, "expected threshold")),
                };
                Ok(Formula::Ap(Ap { dim, cmp, threshold }))
            }
            _ => Err(TlError::syntax(at, "expected formula")),
        }
    }
}

/// Parses with the default `sN` feature names.
pub fn parse_formula(text: &str) -> Result<Formula, TlError> {
    parse_formula_with(text, &FeatureNames::indexed())
}

pub fn parse_formula_with(text: &str, names: &FeatureNames) -> Result<Formula, TlError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end: text.len(), names };
    let f = p.or()?;
    if p.pos < p.toks.len() {
        return Err(TlError::syntax(p.offset(), "trailing input"));
    }
    let params = f.collect_params();
    let mut seen = params.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != params.len() {
        return Err(TlError::syntax(0, "parameter ids must be distinct"));
    }
    Ok(f)
}

pub fn format_formula(f: &Formula) -> String {
    format_formula_with(f, &FeatureNames::indexed())
}

pub fn format_formula_with(f: &Formula, names: &FeatureNames) -> String {
    let mut out = String::new();
    write_formula(f, names, &mut out);
    out
}

fn write_ap(ap: &Ap, names: &FeatureNames, out: &mut String) {
    out.push_str(&names.name(ap.dim));
    out.push(' ');
    out.push_str(ap.cmp.symbol());
    out.push(' ');
    match ap.threshold {
        Threshold::Concrete(v) => out.push_str(&format!("{v}")),
        Threshold::Param(id) => out.push_str(&format!("?p{id}")),
    }
}

fn write_formula(f: &Formula, names: &FeatureNames, out: &mut String) {
    let wrapped = |c: &Formula, out: &mut String| {
        out.push('(');
        write_formula(c, names, out);
        out.push(')');
    };
    match f {
        Formula::True => out.push_str("true"),
        Formula::False => out.push_str("false"),
        Formula::Ap(ap) => write_ap(ap, names, out),
        Formula::NotAp(ap) => {
            out.push_str("!(");
            write_ap(ap, names, out);
            out.push(')');
        }
        Formula::Next(c) | Formula::Eventually(c) | Formula::Always(c) => {
            out.push_str(match f {
                Formula::Next(_) => "X",
                Formula::Eventually(_) => "F",
                _ => "G",
            });
            wrapped(c, out);
        }
        Formula::And(l, r) | Formula::Or(l, r) | Formula::Until(l, r) | Formula::Release(l, r) => {
            let sym = match f {
                Formula::And(..) => " & ",
                Formula::Or(..) => " | ",
                Formula::Until(..) => " U ",
                _ => " R ",
            };
            wrapped(l, out);
            out.push_str(sym);
            wrapped(r, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nav() -> FeatureNames {
        FeatureNames::new(["x", "y", "pR_dist", "pG_dist", "pB_dist"])
    }

    #[test]
    fn always_ap() {
        let f = parse_formula("G(s0 < 0.2)").unwrap();
        assert_eq!(f, Formula::always(Formula::Ap(Ap::lt(0, 0.2))));
        assert_eq!(format_formula(&f), "G(s0 < 0.2)");
    }

    #[test]
    fn until_formats_with_parens() {
        let f = Formula::until(Formula::Ap(Ap::gt(1, 0.25)), Formula::Ap(Ap::lt(2, 0.08)));
        assert_eq!(format_formula(&f), "(s1 > 0.25) U (s2 < 0.08)");
    }

    #[test]
    fn named_features_and_precedence() {
        let f = parse_formula_with(
            "G(pR_dist > 0.2) & (pB_dist > 0.25 U pG_dist < 0.08)",
            &nav(),
        )
        .unwrap();
        let expected = Formula::and(
            Formula::always(Formula::Ap(Ap::gt(2, 0.2))),
            Formula::until(Formula::Ap(Ap::gt(4, 0.25)), Formula::Ap(Ap::lt(3, 0.08))),
        );
        assert_eq!(f, expected);
        let text = format_formula_with(&f, &nav());
        assert_eq!(parse_formula_with(&text, &nav()).unwrap(), f);
    }

    #[test]
    fn negation_only_on_aps() {
        assert!(matches!(
            parse_formula("!(G(s0<1))"),
            Err(TlError::NegationNotOnAp { offset: 0 })
        ));
        assert_eq!(
            parse_formula("!(s0 < 1)").unwrap(),
            Formula::NotAp(Ap::lt(0, 1.0))
        );
    }

    #[test]
    fn unknown_feature() {
        let err = parse_formula_with("G(pX_dist < 1)", &nav()).unwrap_err();
        assert!(matches!(err, TlError::UnknownFeature { offset: 2, .. }), "{err:?}");
        assert!(parse_formula("G(foo < 1)").is_err());
    }

    #[test]
    fn syntax_error_offsets() {
        match parse_formula("G(s0 < )") {
            Err(TlError::Syntax { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("{other:?}"),
        }
        match parse_formula("(s0 < 1") {
            Err(TlError::Syntax { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("{other:?}"),
        }
        assert!(parse_formula("s0 < 1 s1").is_err());
    }

    #[test]
    fn params_and_numbers() {
        let f = parse_formula("(s0 < ?p0) U (s1 > ?p1)").unwrap();
        assert_eq!(f.collect_params(), vec![0, 1]);
        assert!(parse_formula("(s0 < ?p0) U (s1 > ?p0)").is_err());
        let f = parse_formula("s0 > -1.5e-3").unwrap();
        assert_eq!(f, Formula::Ap(Ap::gt(0, -1.5e-3)));
    }

    #[test]
    fn until_is_right_associative() {
        let f = parse_formula("s0 < 1 U s1 < 1 U s2 < 1").unwrap();
        let (a, b, c) = (
            Formula::Ap(Ap::lt(0, 1.0)),
            Formula::Ap(Ap::lt(1, 1.0)),
            Formula::Ap(Ap::lt(2, 1.0)),
        );
        assert_eq!(f, Formula::until(a, Formula::until(b, c)));
    }
}
