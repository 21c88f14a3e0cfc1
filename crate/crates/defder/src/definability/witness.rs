//! Nonzero-witness search over Q[t] and parameter elimination.
//!
//! A nonzero differential polynomial over Q(t) cannot vanish at every tuple
//! of polynomials in t: its failure locus on the candidate coefficients is a
//! proper Zariski-closed set over Q, so a fair integer spiral terminates.
//! Candidates for the i-th slot have degree exactly ord_i (the derivative
//! order of the slot in f) with positive leading coefficient; the remaining
//! coefficients sweep 0, 1, -1, 2, -2, ... by increasing height.

use super::DefinabilityError;
use crate::diffpoly::{DiffPoly, Var};
use crate::formula::{AlgTerm, Formula};
use crate::ratfun::{rat, Poly, RatFun, Rational};
use std::collections::BTreeMap;

/// A formula with parameter slots and the guard polynomial under which it
/// defines the derivation: whenever guard(params) != 0, the formula with
/// those parameter values defines y = Dx.
#[derive(Debug, Clone)]
pub struct GuardedFormula {
    pub formula: Formula,
    pub params: Vec<Var>,
    pub guard: DiffPoly,
}

/// Candidate coefficient value by spiral index: 0, 1, -1, 2, -2, ...
fn spiral_value(idx: u64) -> i64 {
    if idx == 0 {
        0
    } else if idx % 2 == 1 {
        (idx as i64 + 1) / 2
    } else {
        -(idx as i64 / 2)
    }
}

/// Find polynomials p_i(t) in Q[t] of degree ord_i(f) with
/// f(p_1, ..., p_n) != 0, verified exactly.
pub fn nonzero_witness(f: &DiffPoly) -> Result<BTreeMap<Var, Poly>, DefinabilityError> {
    if f.is_zero() {
        return Err(DefinabilityError::ZeroPolynomial);
    }
    let vars: Vec<Var> = f.vars().into_iter().collect();
    if vars.is_empty() {
        // Constant nonzero polynomial: any assignment works.
        return Ok(BTreeMap::new());
    }
    // One slot per coefficient: (variable index, power of t, is_leading).
    let mut slots = Vec::new();
    for (vi, v) in vars.iter().enumerate() {
        let deg = f.order_of(v).unwrap_or(0) as usize;
        for p in 0..=deg {
            slots.push((vi, p, p == deg));
        }
    }
    let build = |choice: &[i64]| -> BTreeMap<Var, Poly> {
        let mut coeffs: Vec<Vec<Rational>> = vars
            .iter()
            .map(|v| vec![Rational::from_integer(0.into()); f.order_of(v).unwrap_or(0) as usize + 1])
            .collect();
        for ((vi, p, _), c) in slots.iter().zip(choice) {
            coeffs[*vi][*p] = rat(*c);
        }
        vars.iter()
            .cloned()
            .zip(coeffs.into_iter().map(Poly::new))
            .collect()
    };
    let eval = |assignment: &BTreeMap<Var, Poly>| -> Result<RatFun, DefinabilityError> {
        let asg: BTreeMap<Var, RatFun> = assignment
            .iter()
            .map(|(v, p)| (v.clone(), RatFun::from_poly(p.clone())))
            .collect();
        Ok(f.eval_ratfun(&asg)?)
    };
    // Fair spiral: sweep tuples by increasing height h = max spiral index,
    // leading coefficients restricted to positive values.
    const MAX_HEIGHT: u64 = 100;
    for h in 1..=MAX_HEIGHT {
        // Odometer over per-slot index ranges; at least one slot at height h.
        let ranges: Vec<u64> = slots
            .iter()
            .map(|(_, _, lead)| if *lead { h } else { 2 * h + 1 })
            .collect();
        let mut idx = vec![0u64; slots.len()];
        loop {
            let at_height = idx
                .iter()
                .zip(&slots)
                .any(|(i, (_, _, lead))| if *lead { i + 1 == h } else { spiral_value(*i).unsigned_abs() == h });
            if at_height {
                let choice: Vec<i64> = idx
                    .iter()
                    .zip(&slots)
                    .map(|(i, (_, _, lead))| {
                        if *lead {
                            *i as i64 + 1
                        } else {
                            spiral_value(*i)
                        }
                    })
                    .collect();
                let candidate = build(&choice);
                if !eval(&candidate)?.is_zero() {
                    return Ok(candidate);
                }
            }
            // Advance the odometer (last slot fastest).
            let mut pos = slots.len();
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < ranges[pos] {
                    break;
                }
                idx[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX {
                break;
            }
        }
    }
    Err(DefinabilityError::Invariant(
        "nonzero witness search exceeded the height budget".into(),
    ))
}

/// Eliminate generic parameters: find a Q[t]-witness of the guard and
/// substitute it into the parameter slots. The result uses only t.
pub fn deparametrize(gf: &GuardedFormula) -> Result<(Formula, BTreeMap<Var, Poly>), DefinabilityError> {
    if gf.guard.is_zero() {
        return Err(DefinabilityError::ZeroPolynomial);
    }
    let mut witness = nonzero_witness(&gf.guard)?;
    // Parameters absent from the guard are unconstrained; pin them to 1.
    for p in &gf.params {
        witness.entry(p.clone()).or_insert_with(Poly::one);
    }
    let images: BTreeMap<Var, AlgTerm> = witness
        .iter()
        .map(|(v, p)| (v.clone(), AlgTerm::constant(RatFun::from_poly(p.clone()))))
        .collect();
    let formula = gf.formula.map_terms(&|t| t.subst(&images));
    Ok((formula, witness))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_formula, parse_poly};
    use std::collections::BTreeSet;

    #[test]
    fn witness_for_dz_minus_one_is_2t() {
        // z -> t fails (Dt - 1 = 0); the spiral settles on 2t with value 1.
        let f = parse_poly("z' - 1").unwrap();
        let w = nonzero_witness(&f).unwrap();
        let z = Var::aux("z");
        assert_eq!(w[&z], Poly::monomial(rat(2), 1));
        let asg: BTreeMap<Var, RatFun> = w
            .iter()
            .map(|(v, p)| (v.clone(), RatFun::from_poly(p.clone())))
            .collect();
        assert_eq!(f.eval_ratfun(&asg).unwrap(), RatFun::one());
    }

    #[test]
    fn witness_for_plain_z_is_one() {
        let f = parse_poly("z").unwrap();
        let w = nonzero_witness(&f).unwrap();
        assert_eq!(w[&Var::aux("z")], Poly::one());
    }

    #[test]
    fn witness_two_variables() {
        let f = parse_poly("z1*z2' - z2").unwrap();
        let w = nonzero_witness(&f).unwrap();
        let asg: BTreeMap<Var, RatFun> = w
            .iter()
            .map(|(v, p)| (v.clone(), RatFun::from_poly(p.clone())))
            .collect();
        assert!(!f.eval_ratfun(&asg).unwrap().is_zero());
        let bound: num::BigUint = 3u32.into();
        for p in w.values() {
            for c in p.coeffs() {
                assert!(c.numer().magnitude() <= &bound, "bound <= 3, got {p}");
            }
        }
    }

    #[test]
    fn zero_polynomial_rejected() {
        assert!(matches!(
            nonzero_witness(&DiffPoly::zero()),
            Err(DefinabilityError::ZeroPolynomial)
        ));
    }

    #[test]
    fn deparametrize_substitutes_witness() {
        let rels: BTreeSet<String> = ["E".to_string()].into();
        let z = Var::aux("z");
        let gf = GuardedFormula {
            formula: parse_formula("E(x, y) & z*x = 0", &rels).unwrap(),
            params: vec![z.clone()],
            guard: parse_poly("z' - 1").unwrap(),
        };
        let (formula, witness) = deparametrize(&gf).unwrap();
        assert_eq!(witness[&z], Poly::monomial(rat(2), 1));
        assert_eq!(formula.to_string(), "E(x, y) & 2*t * x = 0");
    }

    #[test]
    fn deparametrize_unconstrained_params_pinned() {
        let rels: BTreeSet<String> = ["E".to_string()].into();
        let z = Var::aux("z");
        let gf = GuardedFormula {
            formula: parse_formula("E(x, y)", &rels).unwrap(),
            params: vec![z.clone()],
            guard: parse_poly("z").unwrap(),
        };
        let (formula, witness) = deparametrize(&gf).unwrap();
        assert_eq!(witness[&z], Poly::one());
        assert_eq!(formula.to_string(), "E(x, y)");
    }

    #[test]
    fn guard_product_takes_ones() {
        let f = parse_poly("z1*z2").unwrap();
        let w = nonzero_witness(&f).unwrap();
        assert_eq!(w[&Var::aux("z1")], Poly::one());
        assert_eq!(w[&Var::aux("z2")], Poly::one());
    }
}
