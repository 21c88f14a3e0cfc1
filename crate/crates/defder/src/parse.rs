//! Parser for the input DSL: differential polynomials, equations, rational
//! functions and reduct formulas.
//!
//! Grammar (formulas extend the poly grammar):
//!
//! ```text
//! poly    := term (('+'|'-') term)*
//! term    := factor (('*'|'/') factor)*        -- '/' only by a constant in t
//! factor  := base ('^' nat)?
//! base    := nat | 't' | var '\''* | 'D(' var ',' nat ')' | '(' poly ')' | '-' factor
//! formula := 'exists' var (',' var)* '.' formula | disj
//! disj    := conj ('|' conj)*
//! conj    := lit ('&' lit)*
//! lit     := '!' lit | rel | poly ('='|'!=') poly | '(' formula ')'
//! rel     := name '(' poly (',' poly)* ')'
//! ```
//!
//! Variable roles come from the spelling: `x` base, `y`/`y<k>` targets,
//! `u`/`u<k>` difference variables, anything else auxiliary.

use crate::diffpoly::{DiffPoly, Var};
use crate::formula::{AlgTerm, Formula, SideCondition};
use crate::ratfun::{RatFun, Rational};
use num::bigint::BigInt;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("division by a non-constant at byte {pos}")]
    NonConstantDivisor { pos: usize },
    #[error("division by zero at byte {pos}")]
    DivisionByZero { pos: usize },
    #[error("atom mentions a derivative indeterminate at byte {pos}: {term}")]
    DerivativeInFormula { pos: usize, term: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Nat(BigInt),
    Ident(String),
    T,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Prime,
    LParen,
    RParen,
    Comma,
    Dot,
    Eq,
    Neq,
    Amp,
    Pipe,
    Bang,
    Exists,
}

struct Lexer {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

fn lex(input: &str) -> Result<Lexer, ParseError> {
    let bytes = input.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push((i, Tok::Plus));
                i += 1;
            }
            '-' => {
                toks.push((i, Tok::Minus));
                i += 1;
            }
            '*' => {
                toks.push((i, Tok::Star));
                i += 1;
            }
            '/' => {
                toks.push((i, Tok::Slash));
                i += 1;
            }
            '^' => {
                toks.push((i, Tok::Caret));
                i += 1;
            }
            '\'' => {
                toks.push((i, Tok::Prime));
                i += 1;
            }
            '(' => {
                toks.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                toks.push((i, Tok::RParen));
                i += 1;
            }
            ',' => {
                toks.push((i, Tok::Comma));
                i += 1;
            }
            '.' => {
                toks.push((i, Tok::Dot));
                i += 1;
            }
            '&' => {
                toks.push((i, Tok::Amp));
                i += 1;
            }
            '|' => {
                toks.push((i, Tok::Pipe));
                i += 1;
            }
            '=' => {
                toks.push((i, Tok::Eq));
                i += 1;
            }
            '!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push((i, Tok::Neq));
                    i += 2;
                } else {
                    toks.push((i, Tok::Bang));
                    i += 1;
                }
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n: BigInt = input[start..i].parse().expect("digits");
                toks.push((start, Tok::Nat(n)));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                let word = &input[start..i];
                let tok = match word {
                    "t" => Tok::T,
                    "exists" => Tok::Exists,
                    _ => Tok::Ident(word.to_string()),
                };
                toks.push((start, tok));
            }
            other => {
                return Err(ParseError::Syntax {
                    pos: i,
                    msg: format!("unexpected character '{other}'"),
                })
            }
        }
    }
    Ok(Lexer {
        toks,
        pos: 0,
        end: input.len(),
    })
}

impl Lexer {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(p, _)| *p)
            .unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), ParseError> {
        let pos = self.here();
        match self.next() {
            Some(t) if &t == want => Ok(()),
            got => Err(ParseError::Syntax {
                pos,
                msg: format!("expected {what}, got {got:?}"),
            }),
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            pos: self.here(),
            msg: msg.into(),
        })
    }
}

fn parse_nat_u32(lx: &mut Lexer) -> Result<u32, ParseError> {
    let pos = lx.here();
    match lx.next() {
        Some(Tok::Nat(n)) => u32::try_from(n).map_err(|_| ParseError::Syntax {
            pos,
            msg: "number too large".into(),
        }),
        got => Err(ParseError::Syntax {
            pos,
            msg: format!("expected a natural number, got {got:?}"),
        }),
    }
}

fn parse_factor(lx: &mut Lexer) -> Result<DiffPoly, ParseError> {
    let base = parse_base(lx)?;
    if lx.peek() == Some(&Tok::Caret) {
        lx.next();
        let e = parse_nat_u32(lx)?;
        return Ok(base.pow(e));
    }
    Ok(base)
}

fn parse_base(lx: &mut Lexer) -> Result<DiffPoly, ParseError> {
    let pos = lx.here();
    match lx.next() {
        Some(Tok::Nat(n)) => Ok(DiffPoly::constant(RatFun::from_rational(
            Rational::from_integer(n),
        ))),
        Some(Tok::T) => Ok(DiffPoly::t()),
        Some(Tok::Minus) => Ok(-&parse_factor(lx)?),
        Some(Tok::Ident(name)) if name == "D" && lx.peek() == Some(&Tok::LParen) => {
            lx.next();
            let vpos = lx.here();
            let var = match lx.next() {
                Some(Tok::Ident(v)) => v,
                got => {
                    return Err(ParseError::Syntax {
                        pos: vpos,
                        msg: format!("expected a variable in D(...), got {got:?}"),
                    })
                }
            };
            lx.expect(&Tok::Comma, "','")?;
            let k = parse_nat_u32(lx)?;
            lx.expect(&Tok::RParen, "')'")?;
            Ok(DiffPoly::der_indet(Var::from_name(&var), k))
        }
        Some(Tok::Ident(name)) => {
            let mut order = 0u32;
            while lx.peek() == Some(&Tok::Prime) {
                lx.next();
                order += 1;
            }
            Ok(DiffPoly::der_indet(Var::from_name(&name), order))
        }
        Some(Tok::LParen) => {
            let inner = parse_poly_expr(lx)?;
            lx.expect(&Tok::RParen, "')'")?;
            Ok(inner)
        }
        got => Err(ParseError::Syntax {
            pos,
            msg: format!("expected a polynomial, got {got:?}"),
        }),
    }
}

fn parse_term(lx: &mut Lexer) -> Result<DiffPoly, ParseError> {
    let mut acc = parse_factor(lx)?;
    loop {
        match lx.peek() {
            Some(Tok::Star) => {
                lx.next();
                acc = &acc * &parse_factor(lx)?;
            }
            Some(Tok::Slash) => {
                let pos = lx.here();
                lx.next();
                let divisor = parse_factor(lx)?;
                let c = as_constant(&divisor)
                    .ok_or(ParseError::NonConstantDivisor { pos })?;
                if c.is_zero() {
                    return Err(ParseError::DivisionByZero { pos });
                }
                acc = acc.scalar_mul(&c.inverse().expect("nonzero"));
            }
            _ => break,
        }
    }
    Ok(acc)
}

fn as_constant(p: &DiffPoly) -> Option<RatFun> {
    if p.is_zero() {
        return Some(RatFun::zero());
    }
    let mut terms = p.terms();
    let (m, c) = terms.next()?;
    if terms.next().is_some() || !m.is_one() {
        return None;
    }
    Some(c.clone())
}

fn parse_poly_expr(lx: &mut Lexer) -> Result<DiffPoly, ParseError> {
    let mut acc = parse_term(lx)?;
    loop {
        match lx.peek() {
            Some(Tok::Plus) => {
                lx.next();
                acc = &acc + &parse_term(lx)?;
            }
            Some(Tok::Minus) => {
                lx.next();
                acc = &acc - &parse_term(lx)?;
            }
            _ => break,
        }
    }
    Ok(acc)
}

/// Parse a differential polynomial.
pub fn parse_poly(input: &str) -> Result<DiffPoly, ParseError> {
    let mut lx = lex(input)?;
    let p = parse_poly_expr(&mut lx)?;
    if lx.peek().is_some() {
        return lx.err("trailing input after polynomial");
    }
    Ok(p)
}

/// Parse `p = q` or a bare polynomial (meaning p = 0); returns p - q.
pub fn parse_equation(input: &str) -> Result<DiffPoly, ParseError> {
    let mut lx = lex(input)?;
    let lhs = parse_poly_expr(&mut lx)?;
    let p = match lx.peek() {
        Some(Tok::Eq) => {
            lx.next();
            let rhs = parse_poly_expr(&mut lx)?;
            &lhs - &rhs
        }
        None => lhs,
        _ => return lx.err("expected '=' or end of input"),
    };
    if lx.peek().is_some() {
        return lx.err("trailing input after equation");
    }
    Ok(p)
}

/// Parse an element of Q(t): a polynomial in t, optionally divided by another.
pub fn parse_ratfun(input: &str) -> Result<RatFun, ParseError> {
    let p = parse_poly(input)?;
    as_constant(&p).ok_or(ParseError::NonConstantDivisor { pos: 0 })
}

/// Parse a reduct formula. `relations` names the relation symbols accepted in
/// atoms (anything else before '(' is a parse error).
pub fn parse_formula(input: &str, relations: &BTreeSet<String>) -> Result<Formula, ParseError> {
    let mut lx = lex(input)?;
    let f = parse_formula_expr(&mut lx, relations)?;
    if lx.peek().is_some() {
        return lx.err("trailing input after formula");
    }
    Ok(f)
}

fn parse_formula_expr(
    lx: &mut Lexer,
    rels: &BTreeSet<String>,
) -> Result<Formula, ParseError> {
    if lx.peek() == Some(&Tok::Exists) {
        lx.next();
        let mut vars = Vec::new();
        loop {
            let pos = lx.here();
            match lx.next() {
                Some(Tok::Ident(name)) => vars.push(Var::from_name(&name)),
                got => {
                    return Err(ParseError::Syntax {
                        pos,
                        msg: format!("expected a variable after 'exists', got {got:?}"),
                    })
                }
            }
            if lx.peek() == Some(&Tok::Comma) {
                lx.next();
            } else {
                break;
            }
        }
        lx.expect(&Tok::Dot, "'.'")?;
        let body = parse_formula_expr(lx, rels)?;
        return Ok(Formula::Exists {
            vars,
            body: Box::new(body),
        });
    }
    let mut parts = vec![parse_conj(lx, rels)?];
    while lx.peek() == Some(&Tok::Pipe) {
        lx.next();
        parts.push(parse_conj(lx, rels)?);
    }
    Ok(if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        Formula::Or(parts)
    })
}

fn parse_conj(lx: &mut Lexer, rels: &BTreeSet<String>) -> Result<Formula, ParseError> {
    let mut parts = vec![parse_literal(lx, rels)?];
    while lx.peek() == Some(&Tok::Amp) {
        lx.next();
        parts.push(parse_literal(lx, rels)?);
    }
    Ok(if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        Formula::And(parts)
    })
}

fn alg(lx: &Lexer, p: DiffPoly) -> Result<AlgTerm, ParseError> {
    let text = p.to_string();
    AlgTerm::new(p).map_err(|_| ParseError::DerivativeInFormula {
        pos: lx.here(),
        term: text,
    })
}

fn parse_literal(lx: &mut Lexer, rels: &BTreeSet<String>) -> Result<Formula, ParseError> {
    match lx.peek() {
        Some(Tok::Bang) => {
            lx.next();
            let inner = parse_literal(lx, rels)?;
            Ok(Formula::Not(Box::new(inner)))
        }
        Some(Tok::Exists) => parse_formula_expr(lx, rels),
        Some(Tok::Ident(name))
            if rels.contains(name) && lx.peek2() == Some(&Tok::LParen) =>
        {
            let name = name.clone();
            lx.next();
            lx.next();
            let mut args = Vec::new();
            loop {
                let p = parse_poly_expr(lx)?;
                args.push(alg(lx, p)?);
                match lx.next() {
                    Some(Tok::Comma) => continue,
                    Some(Tok::RParen) => break,
                    got => {
                        return lx.err(format!("expected ',' or ')' in relation atom, got {got:?}"))
                    }
                }
            }
            Ok(Formula::Rel { name, args })
        }
        Some(Tok::LParen) => {
            // Either a parenthesised formula or a parenthesised polynomial;
            // try the formula reading first and rewind on failure.
            let save = lx.pos;
            lx.next();
            if let Ok(inner) = parse_formula_expr(lx, rels) {
                if lx.peek() == Some(&Tok::RParen) {
                    lx.next();
                    // A closed formula not followed by '=' is the paren case.
                    if lx.peek() != Some(&Tok::Eq) && lx.peek() != Some(&Tok::Neq) {
                        return Ok(inner);
                    }
                }
            }
            lx.pos = save;
            parse_comparison(lx, rels)
        }
        _ => parse_comparison(lx, rels),
    }
}

fn parse_comparison(lx: &mut Lexer, _rels: &BTreeSet<String>) -> Result<Formula, ParseError> {
    let lhs = parse_poly_expr(lx)?;
    match lx.next() {
        Some(Tok::Eq) => {
            let rhs = parse_poly_expr(lx)?;
            let term = alg(lx, &lhs - &rhs)?;
            Ok(Formula::Eq(term))
        }
        Some(Tok::Neq) => {
            let rhs = parse_poly_expr(lx)?;
            let term = alg(lx, &lhs - &rhs)?;
            Ok(Formula::Not(Box::new(Formula::Eq(term))))
        }
        got => lx.err(format!("expected '=' or '!=', got {got:?}")),
    }
}

/// Parse a side condition: Boolean combination of differential-polynomial
/// equations and inequations (derivatives allowed, unlike reduct formulas).
pub fn parse_side_condition(input: &str) -> Result<SideCondition, ParseError> {
    let mut lx = lex(input)?;
    let c = parse_side_disj(&mut lx)?;
    if lx.peek().is_some() {
        return lx.err("trailing input after side condition");
    }
    Ok(c)
}

fn parse_side_disj(lx: &mut Lexer) -> Result<SideCondition, ParseError> {
    let mut parts = vec![parse_side_conj(lx)?];
    while lx.peek() == Some(&Tok::Pipe) {
        lx.next();
        parts.push(parse_side_conj(lx)?);
    }
    Ok(if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        SideCondition::Any(parts)
    })
}

fn parse_side_conj(lx: &mut Lexer) -> Result<SideCondition, ParseError> {
    let mut parts = vec![parse_side_atom(lx)?];
    while lx.peek() == Some(&Tok::Amp) {
        lx.next();
        parts.push(parse_side_atom(lx)?);
    }
    Ok(if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        SideCondition::All(parts)
    })
}

fn parse_side_atom(lx: &mut Lexer) -> Result<SideCondition, ParseError> {
    if lx.peek() == Some(&Tok::LParen) {
        let save = lx.pos;
        lx.next();
        if let Ok(inner) = parse_side_disj(lx) {
            if lx.peek() == Some(&Tok::RParen) {
                lx.next();
                return Ok(inner);
            }
        }
        lx.pos = save;
    }
    let lhs = parse_poly_expr(lx)?;
    match lx.next() {
        Some(Tok::Eq) => {
            let rhs = parse_poly_expr(lx)?;
            Ok(SideCondition::Zero(&lhs - &rhs))
        }
        Some(Tok::Neq) => {
            let rhs = parse_poly_expr(lx)?;
            Ok(SideCondition::NonZero(&lhs - &rhs))
        }
        got => lx.err(format!("expected '=' or '!=', got {got:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffpoly::{DiffPoly, Var};
    use crate::ratfun::{rat, ratio, Poly};

    fn x() -> Var {
        Var::base("x")
    }

    fn y() -> Var {
        Var::target(1, "y")
    }

    #[test]
    fn parse_example_atoms() {
        // "y' - x''" is DY - D^2 X.
        let p = parse_poly("y' - x''").unwrap();
        let expected = &DiffPoly::der_indet(y(), 1) - &DiffPoly::der_indet(x(), 2);
        assert_eq!(p, expected);

        // "x*u1 + u2" with difference variables.
        let q = parse_poly("x*u1 + u2").unwrap();
        let u1 = Var::diff(1, "u1");
        let u2 = Var::diff(2, "u2");
        let expected = &(&DiffPoly::var(x()) * &DiffPoly::var(u1)) + &DiffPoly::var(u2);
        assert_eq!(q, expected);

        // "t^2*x - (1/2)".
        let r = parse_poly("t^2*x - (1/2)").unwrap();
        let expected = &DiffPoly::var(x()).scalar_mul(&RatFun::from_poly(Poly::monomial(rat(1), 2)))
            - &DiffPoly::constant(RatFun::from_rational(ratio(1, 2)));
        assert_eq!(r, expected);
    }

    #[test]
    fn d_notation_matches_primes() {
        assert_eq!(parse_poly("D(x,2)").unwrap(), parse_poly("x''").unwrap());
        assert_eq!(parse_poly("D(x,0)").unwrap(), parse_poly("x").unwrap());
    }

    #[test]
    fn equation_forms() {
        let a = parse_equation("y = x''").unwrap();
        let b = parse_equation("y - x'' = 0").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ratfun_literals() {
        assert_eq!(parse_ratfun("(t^2 - t)/(t + 1)").unwrap().to_string(), "(t^2 - t)/(t + 1)");
        assert_eq!(parse_ratfun("1/2").unwrap(), RatFun::from_rational(ratio(1, 2)));
        assert!(parse_ratfun("x + 1").is_err());
        assert!(matches!(
            parse_poly("x / y"),
            Err(ParseError::NonConstantDivisor { .. })
        ));
        assert!(matches!(
            parse_poly("x / 0"),
            Err(ParseError::DivisionByZero { .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_poly("x + %").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { pos: 4, .. }));
    }

    #[test]
    fn formula_round_trip() {
        let rels: BTreeSet<String> = ["E".to_string()].into();
        for text in [
            "E(x, y)",
            "E(x, y) & E(t * x, x + t * y)",
            "u = 0",
            "x = 0 | !(y = 0)",
            "exists z. (E(x, z) & z - y = 0)",
            "exists w0, w1. (E(x, w0) & E(t * x, w1) & y + t * w0 - w1 = 0)",
        ] {
            let f = parse_formula(text, &rels).unwrap();
            assert_eq!(f.to_string(), text, "round trip through printer");
            let again = parse_formula(&f.to_string(), &rels).unwrap();
            assert_eq!(f, again);
        }
    }

    #[test]
    fn formula_rejects_derivatives_in_atoms() {
        let rels: BTreeSet<String> = ["E".to_string()].into();
        assert!(matches!(
            parse_formula("x' = 0", &rels),
            Err(ParseError::DerivativeInFormula { .. })
        ));
    }

    #[test]
    fn side_conditions() {
        let c = parse_side_condition("x' != 0 | x = 0").unwrap();
        match c {
            SideCondition::Any(parts) => assert_eq!(parts.len(), 2),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn diffpoly_display_reparses() {
        use rand::rngs::StdRng;
        use rand::SeedableRng;
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..100 {
            let f = crate::corpus::random_diffpoly(
                &mut rng,
                &[x(), y(), Var::diff(1, "u")],
                3,
                3,
                4,
                2,
            );
            let text = f.to_string();
            let back = parse_poly(&text).unwrap();
            assert_eq!(f, back, "reparse of {text}");
        }
    }
}
