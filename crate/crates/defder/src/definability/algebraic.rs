//! Front-end for algebraic-function curves: f(x, y) = 0 with ord_Y(f) = 0
//! and ord_X(f) > 0 yields the small-rank formula
//! `exists z. (E(x, z) & p(x, y1, ..., yn, z) = 0)` for a caller-certified
//! irreducible factor p, with the derivative indeterminates of p replaced by
//! the algebraic variables y_k. The op emits the formula plus an empirical
//! D-formula report; it does not construct the final explicit definition in
//! the general algebraic case.

use super::dformula::DFormulaReport;
use super::DefinabilityError;
use crate::diffpoly::{DiffPoly, Monomial, Var};
use crate::formula::{AlgTerm, Formula, RelationSpec};
use crate::series::ModelConfig;
use std::collections::BTreeMap;

/// Result of the algebraic front-end.
#[derive(Debug, Clone)]
pub struct AlgebraicFront {
    pub formula: Formula,
    pub factor: DiffPoly,
    pub report: DFormulaReport,
}

/// True when the coefficient matrix over (X-monomial, Y-monomial) pairs has
/// rank one with both sides non-constant, i.e. f = g(X) * h(Y) separates.
fn separates(f: &DiffPoly, x: &Var, y: &Var) -> bool {
    let mut entries: BTreeMap<(Monomial, Monomial), crate::ratfun::RatFun> = BTreeMap::new();
    let mut x_monos = std::collections::BTreeSet::new();
    let mut y_monos = std::collections::BTreeSet::new();
    for (m, c) in f.terms() {
        let xm = m.restrict(|v| v == x);
        let ym = m.restrict(|v| v == y);
        x_monos.insert(xm.clone());
        y_monos.insert(ym.clone());
        entries.insert((xm, ym), c.clone());
    }
    let nontrivial_x = x_monos.iter().any(|m| !m.is_one());
    let nontrivial_y = y_monos.iter().any(|m| !m.is_one());
    if !nontrivial_x || !nontrivial_y {
        // Depends on one side only; trivially separable.
        return true;
    }
    // Rank-1 test: every 2x2 minor vanishes.
    let x_list: Vec<_> = x_monos.into_iter().collect();
    let y_list: Vec<_> = y_monos.into_iter().collect();
    let get = |i: usize, j: usize| {
        entries
            .get(&(x_list[i].clone(), y_list[j].clone()))
            .cloned()
            .unwrap_or_else(crate::ratfun::RatFun::zero)
    };
    for i1 in 0..x_list.len() {
        for i2 in i1 + 1..x_list.len() {
            for j1 in 0..y_list.len() {
                for j2 in j1 + 1..y_list.len() {
                    let minor = &(&get(i1, j1) * &get(i2, j2)) - &(&get(i1, j2) * &get(i2, j1));
                    if !minor.is_zero() {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Build the formula and report. `p` must be a caller-certified irreducible
/// factor of the defining equation depending on both the X-part and Y;
/// irreducibility itself is the caller's responsibility, divisibility and
/// dependence are checked exactly here.
pub fn algebraic_front(
    spec: &RelationSpec,
    p: &DiffPoly,
    cfg: &ModelConfig,
    samples: usize,
) -> Result<AlgebraicFront, DefinabilityError> {
    let f = spec
        .defining
        .first()
        .ok_or(DefinabilityError::NoDefiningEquation)?;
    if spec.chain.len() != 1 {
        return Err(DefinabilityError::NotAlgebraicShape(
            "the algebraic front-end works on a planar curve E(x, y)".into(),
        ));
    }
    let x = &spec.x;
    let y = &spec.chain[0];
    match f.order_of(y) {
        Some(0) => {}
        Some(_) => {
            return Err(DefinabilityError::NotAlgebraicShape(
                "ord_Y(f) must be 0".into(),
            ))
        }
        None => {
            return Err(DefinabilityError::NotAlgebraicShape(
                "f must depend on y".into(),
            ))
        }
    }
    if f.order_of(x).unwrap_or(0) == 0 {
        return Err(DefinabilityError::NotAlgebraicShape(
            "ord_X(f) must be positive".into(),
        ));
    }
    if separates(f, x, y) {
        return Err(DefinabilityError::SeparableEquation);
    }
    if f.exact_div(p).is_none() {
        return Err(DefinabilityError::FactorDoesNotDivide);
    }
    if p.order_of(y) != Some(0) || p.order_of(x).unwrap_or(0) == 0 {
        return Err(DefinabilityError::NotAlgebraicShape(
            "the factor must depend on y and on a derivative of x".into(),
        ));
    }

    // phi(x, y1..yn) = exists z. (E(x, z) & p~ = 0) where p~ replaces D^k X
    // by y_k and Y by z.
    let n = p.order_of(x).unwrap();
    let z = Var::aux("z");
    let targets: Vec<Var> = (1..=n).map(|k| Var::target(k, format!("y{k}"))).collect();
    let mut p_alg = DiffPoly::zero();
    for (m, c) in p.terms() {
        let mut term = DiffPoly::constant(c.clone());
        for (d, e) in m.powers() {
            let image = if &d.var == x && d.order >= 1 {
                DiffPoly::var(targets[d.order as usize - 1].clone())
            } else if &d.var == y {
                DiffPoly::var(z.clone())
            } else {
                DiffPoly::der_indet(d.var.clone(), d.order)
            };
            term = &term * &image.pow(e);
        }
        p_alg = &p_alg + &term;
    }
    let atom = Formula::rel(spec, vec![AlgTerm::var(x.clone()), AlgTerm::var(z.clone())])?;
    let body = Formula::And(vec![atom, Formula::Eq(AlgTerm::new(p_alg)?)]);
    let formula = Formula::Exists {
        vars: vec![z],
        body: Box::new(body),
    };

    // Empirical D-formula evidence over the (x, y1..yn) tuple; the relation
    // stays the planar curve.
    let report = super::dformula::is_d_formula_over(
        &formula,
        spec,
        x,
        &targets,
        &BTreeMap::new(),
        cfg,
        samples,
    );
    Ok(AlgebraicFront {
        formula,
        factor: p.clone(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_poly;

    fn spec_for(f: &str) -> RelationSpec {
        RelationSpec {
            name: "E".into(),
            x: Var::base("x"),
            chain: vec![Var::target(1, "y")],
            defining: vec![parse_poly(f).unwrap()],
            side: None,
        }
    }

    fn assert_same_formula(got: &Formula, expected: &str) {
        let rels: std::collections::BTreeSet<String> = ["E".to_string()].into();
        let want = crate::parse::parse_formula(expected, &rels).unwrap();
        assert_eq!(got, &want, "got {got}");
    }

    #[test]
    fn linear_factor_formula() {
        // f = Y - DX - X, p = f: phi = exists z. (E(x, z) & z - y1 - x = 0).
        let spec = spec_for("y - x' - x");
        let p = parse_poly("y - x' - x").unwrap();
        let out = algebraic_front(&spec, &p, &ModelConfig::default(), 20).unwrap();
        assert_same_formula(&out.formula, "exists z. (E(x, z) & z - y1 - x = 0)");
        assert_eq!(out.report.verdict, super::super::DFormulaVerdict::Pass);
    }

    #[test]
    fn quadratic_factor_formula() {
        // f = Y^2 - X * DX, p = f: phi = exists z. (E(x, z) & z^2 - x*y1 = 0);
        // existence of z is decided by the resultant.
        let spec = spec_for("y*y - x*x'");
        let p = parse_poly("y*y - x*x'").unwrap();
        let out = algebraic_front(&spec, &p, &ModelConfig::default(), 20).unwrap();
        assert_same_formula(&out.formula, "exists z. (E(x, z) & z^2 - x * y1 = 0)");
        assert_eq!(out.report.verdict, super::super::DFormulaVerdict::Pass);
    }

    #[test]
    fn separable_equation_rejected() {
        let spec = spec_for("y * x'");
        let p = parse_poly("y * x'").unwrap();
        assert!(matches!(
            algebraic_front(&spec, &p, &ModelConfig::default(), 5),
            Err(DefinabilityError::SeparableEquation)
        ));
    }

    #[test]
    fn non_dividing_factor_rejected() {
        let spec = spec_for("y*y - x*x'");
        let p = parse_poly("y - x'").unwrap();
        assert!(matches!(
            algebraic_front(&spec, &p, &ModelConfig::default(), 5),
            Err(DefinabilityError::FactorDoesNotDivide)
        ));
    }

    #[test]
    fn wrong_orders_rejected() {
        // ord_Y > 0.
        let spec = spec_for("y' - x'");
        let p = parse_poly("y' - x'").unwrap();
        assert!(matches!(
            algebraic_front(&spec, &p, &ModelConfig::default(), 5),
            Err(DefinabilityError::NotAlgebraicShape(_))
        ));
        // ord_X = 0.
        let spec2 = spec_for("y - x");
        let p2 = parse_poly("y - x").unwrap();
        assert!(matches!(
            algebraic_front(&spec2, &p2, &ModelConfig::default(), 5),
            Err(DefinabilityError::NotAlgebraicShape(_))
        ));
    }
}
