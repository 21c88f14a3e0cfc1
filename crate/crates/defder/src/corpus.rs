//! Seeded random generators for differential polynomials and curve corpora.
//!
//! Used by the property suites, the acceptance corpus runs and the benches.
//! Everything is deterministic given the generator state.

use crate::diffpoly::{DerIndet, DiffPoly, Monomial, Var};
use crate::ratfun::{rat, Poly, RatFun, Rational};
use rand::Rng;

/// Random rational p/q with |p| <= bound, 1 <= q <= bound.
pub fn random_rational(rng: &mut impl Rng, bound: i64) -> Rational {
    Rational::new(
        rng.random_range(-bound..=bound).into(),
        rng.random_range(1..=bound).into(),
    )
}

/// Random polynomial coefficient in Q(t) of degree <= deg with small integer
/// coefficients, never zero.
pub fn random_coeff(rng: &mut impl Rng, deg: usize) -> RatFun {
    loop {
        let p = Poly::new(
            (0..=rng.random_range(0..=deg))
                .map(|_| rat(rng.random_range(-4..=4)))
                .collect(),
        );
        if !p.is_zero() {
            return RatFun::from_poly(p);
        }
    }
}

/// Random sparse differential polynomial in the given variables: at most
/// `terms` monomials, derivative order <= max_order, total degree <= max_deg,
/// coefficients in Q(t) of degree <= coeff_deg. May be zero when unlucky.
pub fn random_diffpoly(
    rng: &mut impl Rng,
    vars: &[Var],
    max_order: u32,
    max_deg: u32,
    terms: usize,
    coeff_deg: usize,
) -> DiffPoly {
    let mut f = DiffPoly::zero();
    for _ in 0..rng.random_range(1..=terms) {
        let deg = rng.random_range(0..=max_deg);
        let mut powers = Vec::new();
        for _ in 0..deg {
            let v = &vars[rng.random_range(0..vars.len())];
            let k = rng.random_range(0..=max_order);
            powers.push((DerIndet::new(v.clone(), k), 1));
        }
        let m = Monomial::from_powers(powers);
        f = &f + &DiffPoly::term(m, random_coeff(rng, coeff_deg));
    }
    f
}

/// Nonzero variant of [`random_diffpoly`].
pub fn random_nonzero_diffpoly(
    rng: &mut impl Rng,
    vars: &[Var],
    max_order: u32,
    max_deg: u32,
    terms: usize,
    coeff_deg: usize,
) -> DiffPoly {
    loop {
        let f = random_diffpoly(rng, vars, max_order, max_deg, terms, coeff_deg);
        if !f.is_zero() {
            return f;
        }
    }
}

/// Random curve containing the graph: f = (Y - DX) * H(X) with H a nonzero
/// random sum of products in x alone (order <= 3, degree <= 3, coefficients of
/// degree <= 2). The y-free cofactor keeps the difference coordinates linear
/// in u, so the reduction provably terminates at a c*U certificate.
pub fn random_graph_curve(rng: &mut impl Rng, x: &Var, y: &Var) -> DiffPoly {
    let u_factor = &DiffPoly::var(y.clone()) - &DiffPoly::der_indet(x.clone(), 1);
    let h = random_nonzero_diffpoly(rng, std::slice::from_ref(x), 3, 3, 3, 2);
    &u_factor * &h
}

/// Random explicit right-hand side f(x) with 1 <= ord(f) <= 3 for the
/// explicit-definition corpus.
pub fn random_explicit_rhs(rng: &mut impl Rng, x: &Var) -> DiffPoly {
    loop {
        let f = random_diffpoly(rng, std::slice::from_ref(x), 3, 3, 3, 2);
        match f.order_of(x) {
            Some(k) if k >= 1 => return f,
            _ => continue,
        }
    }
}
