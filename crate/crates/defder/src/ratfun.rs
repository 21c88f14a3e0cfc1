//! Exact arithmetic for Q and the base differential field k0 = Q(t).
//!
//! `Rational` is an arbitrary-precision rational, always in lowest terms with a
//! positive denominator. `Poly` is a dense univariate polynomial in t over Q,
//! `RatFun` a quotient of two such polynomials kept canonical (coprime, monic
//! denominator) so that equality is structural. The derivation is d/dt with
//! D t = 1; constants from Q are killed.

use num::bigint::BigInt;
use num::{One, Signed, Zero};
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

/// Arbitrary-precision rational number, stored in lowest terms with a
/// positive denominator.
pub type Rational = num::BigRational;

/// Shorthand for an integer rational.
pub fn rat(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Shorthand for the rational n/d.
pub fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArithError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("pole at t = {0}")]
    Pole(Rational),
}

/// Dense univariate polynomial in t over Q.
///
/// Coefficients are stored in ascending powers with no trailing zeros; the
/// zero polynomial has an empty coefficient vector.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Poly {
    coeffs: Vec<Rational>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<Rational>) -> Self {
        while coeffs.last().is_some_and(Zero::is_zero) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: vec![] }
    }

    pub fn one() -> Self {
        Poly::constant(Rational::one())
    }

    pub fn constant(c: Rational) -> Self {
        Poly::new(vec![c])
    }

    /// The generator t.
    pub fn t() -> Self {
        Poly::new(vec![Rational::zero(), Rational::one()])
    }

    /// c * t^k.
    pub fn monomial(c: Rational, k: usize) -> Self {
        let mut coeffs = vec![Rational::zero(); k + 1];
        coeffs[k] = c;
        Poly::new(coeffs)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, or None for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn coeff(&self, k: usize) -> Rational {
        self.coeffs.get(k).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    pub fn leading(&self) -> Option<&Rational> {
        self.coeffs.last()
    }

    pub fn scale(&self, c: &Rational) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly::new(self.coeffs.iter().map(|a| a * c).collect())
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::zero();
        }
        Poly::new(
            self.coeffs[1..]
                .iter()
                .enumerate()
                .map(|(i, a)| a * rat(i as i64 + 1))
                .collect(),
        )
    }

    pub fn eval(&self, x: &Rational) -> Rational {
        let mut acc = Rational::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    /// Euclidean division; the divisor must be nonzero.
    pub fn div_rem(&self, d: &Poly) -> Result<(Poly, Poly), ArithError> {
        if d.is_zero() {
            return Err(ArithError::DivisionByZero);
        }
        let dd = d.degree().unwrap();
        let dl = d.leading().unwrap().clone();
        let mut rem = self.clone();
        let mut quot = vec![Rational::zero(); self.coeffs.len().saturating_sub(dd)];
        while let Some(rd) = rem.degree() {
            if rd < dd {
                break;
            }
            let f = rem.leading().unwrap() / &dl;
            let shift = rd - dd;
            quot[shift] = f.clone();
            let mut coeffs = rem.coeffs;
            for (i, c) in d.coeffs.iter().enumerate() {
                coeffs[shift + i] -= c * &f;
            }
            rem = Poly::new(coeffs);
        }
        Ok((Poly::new(quot), rem))
    }

    /// Monic gcd over Q via the primitive pseudo-remainder sequence on the
    /// integer parts, which keeps coefficient heights flat.
    pub fn gcd(&self, other: &Poly) -> Poly {
        if self.is_zero() {
            return other.monic();
        }
        if other.is_zero() {
            return self.monic();
        }
        let mut a = int_primitive(self);
        let mut b = int_primitive(other);
        if a.len() < b.len() {
            std::mem::swap(&mut a, &mut b);
        }
        while !b.is_empty() {
            let r = int_primitive_part(pseudo_rem(&a, &b));
            a = b;
            b = r;
        }
        Poly::new(a.into_iter().map(Rational::from_integer).collect()).monic()
    }

    /// Divide by the leading coefficient; zero stays zero.
    pub fn monic(&self) -> Poly {
        match self.leading() {
            None => Poly::zero(),
            Some(l) => {
                let inv = Rational::one() / l;
                self.scale(&inv)
            }
        }
    }

    pub fn pow(&self, e: u32) -> Poly {
        let mut acc = Poly::one();
        for _ in 0..e {
            acc = &acc * self;
        }
        acc
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let mut coeffs = Vec::with_capacity(n);
        for i in 0..n {
            coeffs.push(self.coeff(i) + rhs.coeff(i));
        }
        Poly::new(coeffs)
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self + &(-rhs)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly::new(self.coeffs.iter().map(|a| -a).collect())
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        if self.is_zero() || rhs.is_zero() {
            return Poly::zero();
        }
        let mut coeffs = vec![Rational::zero(); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Poly::new(coeffs)
    }
}

/// Integer coefficient vector of p scaled to integers and divided by content;
/// empty for zero. Highest coefficient last, no trailing zeros.
fn int_primitive(p: &Poly) -> Vec<BigInt> {
    let mut denom_lcm = BigInt::one();
    for c in &p.coeffs {
        denom_lcm = num::integer::lcm(denom_lcm, c.denom().clone());
    }
    int_primitive_part(
        p.coeffs
            .iter()
            .map(|c| c.numer() * (&denom_lcm / c.denom()))
            .collect(),
    )
}

fn int_primitive_part(mut v: Vec<BigInt>) -> Vec<BigInt> {
    while v.last().is_some_and(Zero::is_zero) {
        v.pop();
    }
    if v.is_empty() {
        return v;
    }
    let mut content = BigInt::zero();
    for c in &v {
        content = num::integer::gcd(content, c.clone());
    }
    v.into_iter().map(|c| c / &content).collect()
}

/// Pseudo-remainder of a by b over Z: lc(b)^(deg a - deg b + 1) * a reduced
/// modulo b without leaving the integers. Requires b nonzero, deg a >= deg b.
fn pseudo_rem(a: &[BigInt], b: &[BigInt]) -> Vec<BigInt> {
    let db = b.len() - 1;
    let lb = b.last().unwrap().clone();
    let mut r: Vec<BigInt> = a.to_vec();
    while r.len() > db {
        let lr = r.last().unwrap().clone();
        if lr.is_zero() {
            r.pop();
            continue;
        }
        let shift = r.len() - 1 - db;
        for c in r.iter_mut() {
            *c = &*c * &lb;
        }
        for (i, bc) in b.iter().enumerate() {
            r[shift + i] -= bc * &lr;
        }
        while r.last().is_some_and(Zero::is_zero) {
            r.pop();
        }
        if r.is_empty() {
            break;
        }
    }
    r
}

fn fmt_rational(q: &Rational) -> String {
    if q.denom().is_one() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

impl fmt::Display for Poly {
    /// Descending powers of t, e.g. `t^2 - t`, `2*t + 1/2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for k in (0..self.coeffs.len()).rev() {
            let c = &self.coeffs[k];
            if c.is_zero() {
                continue;
            }
            let abs = c.abs();
            if first {
                if c.is_negative() {
                    write!(f, "-")?;
                }
                first = false;
            } else if c.is_negative() {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let pow = match k {
                0 => String::new(),
                1 => "t".to_string(),
                _ => format!("t^{k}"),
            };
            if k == 0 {
                write!(f, "{}", fmt_rational(&abs))?;
            } else if abs.is_one() {
                write!(f, "{pow}")?;
            } else {
                write!(f, "{}*{}", fmt_rational(&abs), pow)?;
            }
        }
        Ok(())
    }
}

/// Element of Q(t): a quotient of univariate polynomials in t.
///
/// Canonical form: gcd(num, den) = 1 and den monic, so equality and ordering
/// are structural. The distinguished element t satisfies D t = 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RatFun {
    num: Poly,
    den: Poly,
}

impl RatFun {
    pub fn new(num: Poly, den: Poly) -> Result<Self, ArithError> {
        if den.is_zero() {
            return Err(ArithError::DivisionByZero);
        }
        Ok(Self::normalized(num, den))
    }

    fn normalized(num: Poly, den: Poly) -> Self {
        debug_assert!(!den.is_zero());
        if num.is_zero() {
            return RatFun {
                num: Poly::zero(),
                den: Poly::one(),
            };
        }
        // Constant denominator: no gcd needed, just rescale.
        if den.degree() == Some(0) {
            let inv = Rational::one() / den.leading().unwrap();
            return RatFun {
                num: num.scale(&inv),
                den: Poly::one(),
            };
        }
        let g = num.gcd(&den);
        let (num, _) = num.div_rem(&g).unwrap();
        let (den, _) = den.div_rem(&g).unwrap();
        let lead = den.leading().unwrap().clone();
        let inv = Rational::one() / lead;
        RatFun {
            num: num.scale(&inv),
            den: den.scale(&inv),
        }
    }

    pub fn zero() -> Self {
        RatFun {
            num: Poly::zero(),
            den: Poly::one(),
        }
    }

    pub fn one() -> Self {
        RatFun::from_poly(Poly::one())
    }

    pub fn t() -> Self {
        RatFun::from_poly(Poly::t())
    }

    pub fn from_poly(p: Poly) -> Self {
        RatFun {
            num: p,
            den: Poly::one(),
        }
    }

    pub fn from_rational(q: Rational) -> Self {
        RatFun::from_poly(Poly::constant(q))
    }

    pub fn from_int(n: i64) -> Self {
        RatFun::from_rational(rat(n))
    }

    pub fn numerator(&self) -> &Poly {
        &self.num
    }

    pub fn denominator(&self) -> &Poly {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.den.degree() == Some(0) && self.num == self.den
    }

    /// Some(q) when the value is a constant from Q.
    pub fn as_rational(&self) -> Option<Rational> {
        if self.den.is_zero() || self.den.degree() != Some(0) {
            return None;
        }
        match self.num.degree() {
            None => Some(Rational::zero()),
            Some(0) => Some(self.num.coeff(0) / self.den.coeff(0)),
            _ => None,
        }
    }

    /// True when the denominator is 1 after normalization.
    pub fn is_polynomial(&self) -> bool {
        self.den.degree() == Some(0)
    }

    pub fn inverse(&self) -> Result<RatFun, ArithError> {
        if self.is_zero() {
            return Err(ArithError::DivisionByZero);
        }
        Ok(RatFun::normalized(self.den.clone(), self.num.clone()))
    }

    pub fn div(&self, rhs: &RatFun) -> Result<RatFun, ArithError> {
        Ok(self * &rhs.inverse()?)
    }

    /// d/dt by the quotient rule; Q-linear, Leibniz, D t = 1.
    pub fn derivative(&self) -> RatFun {
        let n = &(&self.num.derivative() * &self.den) - &(&self.num * &self.den.derivative());
        let d = &self.den * &self.den;
        RatFun::normalized(n, d)
    }

    /// Exact evaluation at t = x; errors at poles.
    pub fn eval(&self, x: &Rational) -> Result<Rational, ArithError> {
        let d = self.den.eval(x);
        if d.is_zero() {
            return Err(ArithError::Pole(x.clone()));
        }
        Ok(self.num.eval(x) / d)
    }

    pub fn pow(&self, e: u32) -> RatFun {
        let mut acc = RatFun::one();
        for _ in 0..e {
            acc = &acc * self;
        }
        acc
    }
}

impl Add for &RatFun {
    type Output = RatFun;
    fn add(self, rhs: &RatFun) -> RatFun {
        let num = &(&self.num * &rhs.den) + &(&rhs.num * &self.den);
        let den = &self.den * &rhs.den;
        RatFun::normalized(num, den)
    }
}

impl Sub for &RatFun {
    type Output = RatFun;
    fn sub(self, rhs: &RatFun) -> RatFun {
        self + &(-rhs)
    }
}

impl Neg for &RatFun {
    type Output = RatFun;
    fn neg(self) -> RatFun {
        RatFun {
            num: -&self.num,
            den: self.den.clone(),
        }
    }
}

impl Mul for &RatFun {
    type Output = RatFun;
    fn mul(self, rhs: &RatFun) -> RatFun {
        let num = &self.num * &rhs.num;
        if num.is_zero() {
            return RatFun::zero();
        }
        RatFun::normalized(num, &self.den * &rhs.den)
    }
}

impl PartialOrd for RatFun {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RatFun {
    /// Deterministic structural order (by canonical denominator, then numerator).
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.den, &self.num).cmp(&(&other.den, &other.num))
    }
}

fn poly_needs_parens(p: &Poly) -> bool {
    match p.degree() {
        None | Some(0) => false,
        Some(_) => {
            // A single power of t with coefficient 1 is an atomic token.
            let nonzero = p.coeffs().iter().filter(|c| !c.is_zero()).count();
            !(nonzero == 1 && p.leading().unwrap().is_one())
        }
    }
}

impl fmt::Display for RatFun {
    /// `numerator/denominator`, e.g. `(t^2 - t)/(t + 1)`; plain numerator when
    /// the denominator is 1.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_polynomial() {
            return write!(f, "{}", self.num);
        }
        let wrap = |p: &Poly| {
            if poly_needs_parens(p) {
                format!("({p})")
            } else {
                format!("{p}")
            }
        };
        write!(f, "{}/{}", wrap(&self.num), wrap(&self.den))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn t() -> RatFun {
        RatFun::t()
    }

    fn random_poly(rng: &mut StdRng, max_deg: usize) -> Poly {
        let deg = rng.random_range(0..=max_deg);
        Poly::new(
            (0..=deg)
                .map(|_| ratio(rng.random_range(-9..=9), rng.random_range(1..=5)))
                .collect(),
        )
    }

    fn random_ratfun(rng: &mut StdRng, max_deg: usize) -> RatFun {
        let num = random_poly(rng, max_deg);
        let mut den = random_poly(rng, max_deg);
        while den.is_zero() {
            den = random_poly(rng, max_deg);
        }
        RatFun::new(num, den).unwrap()
    }

    #[test]
    fn field_ops_basics() {
        assert_eq!(&t() + &t(), RatFun::from_poly(Poly::monomial(rat(2), 1)));
        assert_eq!(&t() * &t().inverse().unwrap(), RatFun::one());
        assert_eq!(RatFun::zero().inverse(), Err(ArithError::DivisionByZero));
    }

    #[test]
    fn cancel_common_factor() {
        // (t^2 - t)/(t - 1) reduces to t; oracle: long division of the raw parts.
        let num = Poly::new(vec![rat(0), rat(-1), rat(1)]);
        let den = Poly::new(vec![rat(-1), rat(1)]);
        let q = RatFun::new(num.clone(), den.clone()).unwrap();
        assert_eq!(q, t());
        let (quot, rem) = num.div_rem(&den).unwrap();
        assert!(rem.is_zero());
        assert_eq!(RatFun::from_poly(quot), t());
    }

    #[test]
    fn derivative_of_t_is_one() {
        assert_eq!(t().derivative(), RatFun::one());
    }

    #[test]
    fn derivative_kills_constants() {
        assert_eq!(RatFun::from_int(7).derivative(), RatFun::zero());
    }

    #[test]
    fn derivative_quotient_rule() {
        // t^2/(t+1) -> (t^2 + 2t)/(t+1)^2, checked by hand and at 3 sample points.
        let q = RatFun::new(Poly::monomial(rat(1), 2), Poly::new(vec![rat(1), rat(1)])).unwrap();
        let d = q.derivative();
        let expected = RatFun::new(
            Poly::new(vec![rat(0), rat(2), rat(1)]),
            &Poly::new(vec![rat(1), rat(1)]) * &Poly::new(vec![rat(1), rat(1)]),
        )
        .unwrap();
        assert_eq!(d, expected);
        for x in [rat(1), rat(2), rat(5)] {
            assert_eq!(d.eval(&x).unwrap(), expected.eval(&x).unwrap());
        }
    }

    #[test]
    fn leibniz_randomized() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let a = random_ratfun(&mut rng, 6);
            let b = random_ratfun(&mut rng, 6);
            let lhs = (&a * &b).derivative();
            let rhs = &(&a * &b.derivative()) + &(&b * &a.derivative());
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn derivative_additive() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..50 {
            let a = random_ratfun(&mut rng, 6);
            let b = random_ratfun(&mut rng, 6);
            assert_eq!((&a + &b).derivative(), &a.derivative() + &b.derivative());
        }
    }

    #[test]
    fn canonical_form_idempotent() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..50 {
            let q = random_ratfun(&mut rng, 6);
            let again = RatFun::new(q.numerator().clone(), q.denominator().clone()).unwrap();
            assert_eq!(q, again);
        }
    }

    #[test]
    fn display_matches_grammar() {
        let q = RatFun::new(
            Poly::new(vec![rat(0), rat(-1), rat(1)]),
            Poly::new(vec![rat(1), rat(1)]),
        )
        .unwrap();
        assert_eq!(q.to_string(), "(t^2 - t)/(t + 1)");
        assert_eq!(t().to_string(), "t");
        assert_eq!(RatFun::from_rational(ratio(1, 2)).to_string(), "1/2");
        assert_eq!(
            RatFun::new(Poly::one(), Poly::t()).unwrap().to_string(),
            "1/t"
        );
    }
}
