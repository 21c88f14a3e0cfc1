//! Truncated formal power series over Q with derivation d/ds.
//!
//! A computable differential field at desk scale, used as the semantic model
//! for randomized validation of produced definitions. Random series stand in
//! for differentially transcendental elements; that is probabilistic only,
//! the authoritative checks are the symbolic ones.

use crate::diffpoly::{DiffPoly, Var};
use crate::ratfun::{rat, RatFun, Rational};
use num::{One, Zero};
use rand::Rng;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error("pole at t = {0} while interpreting a rational function")]
    Pole(Rational),
    #[error("truncation {truncation} insufficient for derivative order {order}")]
    InsufficientTruncation { truncation: usize, order: u32 },
    #[error("incompatible truncations {0} and {1}")]
    TruncationMismatch(usize, usize),
    #[error("no assignment for variable {0}")]
    MissingAssignment(String),
}

/// Truncated power series a0 + a1 s + ... + a_(N-1) s^(N-1).
///
/// `known` tracks how many leading coefficients are meaningful: addition and
/// multiplication keep the minimum of the operands' known orders, the
/// derivation drops it by one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncSeries {
    coeffs: Vec<Rational>,
    known: usize,
}

impl TruncSeries {
    pub fn new(mut coeffs: Vec<Rational>, truncation: usize, known: usize) -> Self {
        coeffs.resize(truncation, Rational::zero());
        TruncSeries {
            coeffs,
            known: known.min(truncation),
        }
    }

    pub fn zero(truncation: usize) -> Self {
        TruncSeries::new(vec![], truncation, truncation)
    }

    pub fn constant(c: Rational, truncation: usize) -> Self {
        TruncSeries::new(vec![c], truncation, truncation)
    }

    /// The series s itself.
    pub fn s(truncation: usize) -> Self {
        TruncSeries::new(vec![Rational::zero(), Rational::one()], truncation, truncation)
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len()
    }

    pub fn known_order(&self) -> usize {
        self.known
    }

    pub fn coeff(&self, i: usize) -> Rational {
        self.coeffs.get(i).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    pub fn add(&self, other: &TruncSeries) -> Result<TruncSeries, SeriesError> {
        self.check(other)?;
        Ok(TruncSeries {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
            known: self.known.min(other.known),
        })
    }

    pub fn sub(&self, other: &TruncSeries) -> Result<TruncSeries, SeriesError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> TruncSeries {
        TruncSeries {
            coeffs: self.coeffs.iter().map(|a| -a).collect(),
            known: self.known,
        }
    }

    pub fn mul(&self, other: &TruncSeries) -> Result<TruncSeries, SeriesError> {
        self.check(other)?;
        let n = self.coeffs.len();
        let mut coeffs = vec![Rational::zero(); n];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                if i + j >= n {
                    break;
                }
                coeffs[i + j] += a * b;
            }
        }
        Ok(TruncSeries {
            coeffs,
            known: self.known.min(other.known),
        })
    }

    pub fn scale(&self, c: &Rational) -> TruncSeries {
        TruncSeries {
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
            known: self.known,
        }
    }

    /// d/ds: coefficient i becomes (i+1) a_(i+1); known order drops by one.
    pub fn derive(&self) -> TruncSeries {
        let n = self.coeffs.len();
        let mut coeffs = Vec::with_capacity(n);
        for i in 1..n {
            coeffs.push(&self.coeffs[i] * rat(i as i64));
        }
        coeffs.push(Rational::zero());
        TruncSeries {
            coeffs,
            known: self.known.saturating_sub(1),
        }
    }

    /// Multiplicative inverse; requires a nonzero constant term.
    pub fn invert(&self) -> Option<TruncSeries> {
        if self.coeffs.first().is_none_or(Zero::is_zero) {
            return None;
        }
        let n = self.coeffs.len();
        let a0_inv = Rational::one() / &self.coeffs[0];
        let mut coeffs = vec![Rational::zero(); n];
        coeffs[0] = a0_inv.clone();
        for i in 1..n {
            let mut acc = Rational::zero();
            for j in 1..=i {
                acc += &self.coeffs[j] * &coeffs[i - j];
            }
            coeffs[i] = -(acc * &a0_inv);
        }
        Some(TruncSeries {
            coeffs,
            known: self.known,
        })
    }

    /// Equality up to the shared known order.
    pub fn eq_up_to_known(&self, other: &TruncSeries) -> bool {
        let k = self.known.min(other.known);
        (0..k).all(|i| self.coeff(i) == other.coeff(i))
    }

    /// Zero up to the known order.
    pub fn is_zero_up_to_known(&self) -> bool {
        self.coeffs[..self.known].iter().all(Zero::is_zero)
    }

    fn check(&self, other: &TruncSeries) -> Result<(), SeriesError> {
        if self.coeffs.len() != other.coeffs.len() {
            return Err(SeriesError::TruncationMismatch(
                self.coeffs.len(),
                other.coeffs.len(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for TruncSeries {
    /// `a0 + a1*s + ... + O(s^N)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut wrote = false;
        for (i, c) in self.coeffs.iter().enumerate().take(self.known) {
            if c.is_zero() {
                continue;
            }
            if wrote {
                write!(f, " + ")?;
            }
            wrote = true;
            match i {
                0 => write!(f, "{c}")?,
                1 => write!(f, "{c}*s")?,
                _ => write!(f, "{c}*s^{i}")?,
            }
        }
        if !wrote {
            write!(f, "0")?;
        }
        write!(f, " + O(s^{})", self.known)
    }
}

/// Parameters of the series model: truncation N, coefficient bound B for
/// random draws, RNG seed, and the expansion point t = t_offset + s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub truncation: usize,
    pub coeff_bound: i64,
    pub seed: u64,
    pub t_offset: Rational,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            truncation: 12,
            coeff_bound: 20,
            seed: 0,
            t_offset: Rational::zero(),
        }
    }
}

impl ModelConfig {
    pub fn with_offset(&self, t_offset: Rational) -> Self {
        ModelConfig {
            t_offset,
            ..self.clone()
        }
    }

    /// Pick the smallest offset from 0, 1, 2, ... at which none of the given
    /// rational functions has a pole and none of the `must_be_nonzero` ones
    /// vanishes.
    pub fn choose_offset<'a>(
        &self,
        coeffs: impl Iterator<Item = &'a RatFun> + Clone,
        must_be_nonzero: impl Iterator<Item = &'a RatFun> + Clone,
    ) -> Self {
        for k in 0i64.. {
            let tau = rat(k);
            let pole_free = coeffs
                .clone()
                .all(|q| !q.denominator().eval(&tau).is_zero());
            let nonzero = must_be_nonzero.clone().all(|q| {
                !q.numerator().eval(&tau).is_zero() && !q.denominator().eval(&tau).is_zero()
            });
            if pole_free && nonzero {
                return self.with_offset(tau);
            }
        }
        unreachable!("finitely many roots cannot cover all integers")
    }
}

/// The interpretation of t: t_offset + s, whose derivation is 1.
pub fn interpret_t(cfg: &ModelConfig) -> TruncSeries {
    TruncSeries::new(
        vec![cfg.t_offset.clone(), Rational::one()],
        cfg.truncation,
        cfg.truncation,
    )
}

/// Expand q(t_offset + s) as a truncated series; errors on a pole at the
/// expansion point (the caller re-draws the offset).
pub fn interpret_ratfun(q: &RatFun, cfg: &ModelConfig) -> Result<TruncSeries, SeriesError> {
    let t = interpret_t(cfg);
    let eval_poly = |p: &crate::ratfun::Poly| {
        let mut acc = TruncSeries::zero(cfg.truncation);
        for c in p.coeffs().iter().rev() {
            acc = acc
                .mul(&t)
                .expect("same truncation")
                .add(&TruncSeries::constant(c.clone(), cfg.truncation))
                .expect("same truncation");
        }
        acc
    };
    let num = eval_poly(q.numerator());
    let den = eval_poly(q.denominator());
    let inv = den
        .invert()
        .ok_or_else(|| SeriesError::Pole(cfg.t_offset.clone()))?;
    Ok(num.mul(&inv).expect("same truncation"))
}

/// A pseudo-generic point: N independent random coefficients, deterministic
/// given the generator state.
pub fn random_generic(cfg: &ModelConfig, rng: &mut impl Rng) -> TruncSeries {
    TruncSeries::new(
        (0..cfg.truncation)
            .map(|_| crate::corpus::random_rational(rng, cfg.coeff_bound))
            .collect(),
        cfg.truncation,
        cfg.truncation,
    )
}

/// Evaluate a differential polynomial with variables assigned series values;
/// D^k v is the k-th d/ds derivative of the assignment.
pub fn eval_diffpoly_series(
    f: &DiffPoly,
    asg: &BTreeMap<Var, TruncSeries>,
    cfg: &ModelConfig,
) -> Result<TruncSeries, SeriesError> {
    let max_order = f.max_order();
    if cfg.truncation < max_order as usize + 2 {
        return Err(SeriesError::InsufficientTruncation {
            truncation: cfg.truncation,
            order: max_order,
        });
    }
    let mut cache: BTreeMap<(Var, u32), TruncSeries> = BTreeMap::new();
    let mut acc = TruncSeries::zero(cfg.truncation);
    for (m, c) in f.terms() {
        let mut term = interpret_ratfun(c, cfg)?;
        for (d, e) in m.powers() {
            let base = asg
                .get(&d.var)
                .ok_or_else(|| SeriesError::MissingAssignment(d.var.name.clone()))?;
            let val = cache
                .entry((d.var.clone(), d.order))
                .or_insert_with(|| {
                    let mut v = base.clone();
                    for _ in 0..d.order {
                        v = v.derive();
                    }
                    v
                })
                .clone();
            for _ in 0..e {
                term = term.mul(&val)?;
            }
        }
        acc = acc.add(&term)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffpoly::DiffPoly;
    use crate::ratfun::{ratio, Poly};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn cfg() -> ModelConfig {
        ModelConfig::default()
    }

    #[test]
    fn derivation_basics() {
        let n = 6;
        assert_eq!(TruncSeries::s(n).derive().coeff(0), rat(1));
        // d/ds (s^2/2) = s
        let half_s2 = TruncSeries::new(vec![rat(0), rat(0), ratio(1, 2)], n, n);
        assert!(half_s2.derive().eq_up_to_known(&TruncSeries::s(n)));
    }

    #[test]
    fn mul_preserves_known_order() {
        let n = 6;
        let a = TruncSeries::new(vec![rat(1), rat(1)], n, n);
        let b = TruncSeries::new(vec![rat(1), rat(-1)], n, n);
        let prod = a.mul(&b).unwrap();
        assert_eq!(prod.coeff(0), rat(1));
        assert_eq!(prod.coeff(1), rat(0));
        assert_eq!(prod.coeff(2), rat(-1));
        assert_eq!(prod.known_order(), n);
    }

    #[test]
    fn interpret_t_examples() {
        assert!(interpret_t(&cfg()).eq_up_to_known(&TruncSeries::s(12)));
        let shifted = cfg().with_offset(rat(3));
        let t = interpret_t(&shifted);
        assert_eq!(t.coeff(0), rat(3));
        assert_eq!(t.coeff(1), rat(1));
        assert!(t.derive().eq_up_to_known(&TruncSeries::constant(rat(1), 12)));
    }

    #[test]
    fn interpret_geometric_series() {
        // 1/(1-t) at offset 0 with N=4: 1 + s + s^2 + s^3; oracle: multiply
        // back by (1 - s) and compare with 1.
        let c = ModelConfig {
            truncation: 4,
            ..cfg()
        };
        let q = RatFun::new(Poly::one(), Poly::new(vec![rat(1), rat(-1)])).unwrap();
        let got = interpret_ratfun(&q, &c).unwrap();
        assert_eq!(got.coeffs(), &[rat(1), rat(1), rat(1), rat(1)]);
        let back = got
            .mul(&TruncSeries::new(vec![rat(1), rat(-1)], 4, 4))
            .unwrap();
        assert!(back.eq_up_to_known(&TruncSeries::constant(rat(1), 4)));
    }

    #[test]
    fn interpret_pole_is_error() {
        let q = RatFun::new(Poly::one(), Poly::t()).unwrap();
        assert_eq!(interpret_ratfun(&q, &cfg()), Err(SeriesError::Pole(rat(0))));
    }

    #[test]
    fn random_generic_deterministic() {
        let c = cfg();
        let a = random_generic(&c, &mut StdRng::seed_from_u64(1));
        let b = random_generic(&c, &mut StdRng::seed_from_u64(1));
        assert_eq!(a, b);
        let other = random_generic(&c, &mut StdRng::seed_from_u64(2));
        assert_ne!(a, other);
        assert_eq!(a.known_order(), c.truncation);
    }

    #[test]
    fn eval_diffpoly_examples() {
        let x = Var::base("x");
        let c = ModelConfig {
            truncation: 4,
            ..cfg()
        };
        let mut asg = BTreeMap::new();
        asg.insert(
            x.clone(),
            TruncSeries::new(vec![rat(0), rat(0), rat(1)], 4, 4),
        );
        let dx = DiffPoly::der_indet(x.clone(), 1);
        let got = eval_diffpoly_series(&dx, &asg, &c).unwrap();
        assert_eq!(got.coeff(1), rat(2));

        // X * DX at X = 1 + s: (1+s) * 1, known order 3.
        let mut asg2 = BTreeMap::new();
        asg2.insert(x.clone(), TruncSeries::new(vec![rat(1), rat(1)], 4, 4));
        let f = &DiffPoly::var(x.clone()) * &dx;
        let got2 = eval_diffpoly_series(&f, &asg2, &c).unwrap();
        assert_eq!(got2.coeff(0), rat(1));
        assert_eq!(got2.coeff(1), rat(1));
        assert_eq!(got2.known_order(), 3);
    }

    #[test]
    fn graph_point_annihilates_graph_curves() {
        let x = Var::base("x");
        let y = Var::target(1, "y");
        let f = &(&DiffPoly::der_indet(y.clone(), 1) - &DiffPoly::der_indet(x.clone(), 2))
            * &DiffPoly::der_indet(x.clone(), 1);
        let c = cfg();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_generic(&c, &mut rng);
            let mut asg = BTreeMap::new();
            asg.insert(x.clone(), a.clone());
            asg.insert(y.clone(), a.derive());
            let v = eval_diffpoly_series(&f, &asg, &c).unwrap();
            assert!(v.is_zero_up_to_known());
        }
    }

    #[test]
    fn derivation_commutes_with_eval() {
        let x = Var::base("x");
        let y = Var::target(1, "y");
        let c = cfg();
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..100 {
            let f = crate::corpus::random_diffpoly(&mut rng, &[x.clone(), y.clone()], 2, 3, 3, 1);
            let mut asg = BTreeMap::new();
            asg.insert(x.clone(), random_generic(&c, &mut rng));
            asg.insert(y.clone(), random_generic(&c, &mut rng));
            let lhs = eval_diffpoly_series(&f.formal_derive(), &asg, &c).unwrap();
            let rhs = eval_diffpoly_series(&f, &asg, &c).unwrap().derive();
            assert!(lhs.eq_up_to_known(&rhs), "f = {f}");
        }
    }
}
