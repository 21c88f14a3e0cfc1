//! The differential polynomial ring Q(t){X1,...,Xm}.
//!
//! Indeterminates are pairs (variable, derivative order); polynomials are
//! sparse maps from monomials to Q(t) coefficients. The formal derivation D
//! extends d/dt on coefficients with D(D^k v) = D^(k+1) v and Leibniz on
//! products. Substitutions are differential-ring endomorphisms determined by
//! images of the order-0 indeterminates and extended through D, so the
//! general-Leibniz expansion of D^k(a*v + b) is computed, never hand-coded.

use crate::ratfun::{rat, ArithError, RatFun, Rational};
use num::Zero;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffPolyError {
    #[error("zero polynomial has no degree vector")]
    ZeroPolynomial,
    #[error("polynomial mentions a variable other than {0}")]
    ForeignVariable(String),
    #[error("substitution scale must be nonzero")]
    ZeroScale,
    #[error("no assignment for variable {0}")]
    MissingAssignment(String),
    #[error(transparent)]
    Arith(#[from] ArithError),
}

/// Semantic role of a variable. The substitution engine needs to know which
/// variables form a graph chain (x; y1..yn; u1..un); names alone do not carry
/// that.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    /// The base variable x.
    Base,
    /// Target y_i, standing for D^i x on the graph (y = y_1).
    Target(u32),
    /// Difference variable u_i = y_i - D^i x (u = u_1).
    Diff(u32),
    /// Auxiliary: witnesses, parameters, z-slots.
    Aux,
}

/// A named variable with an explicit role tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub role: Role,
    pub name: String,
}

impl Var {
    pub fn base(name: impl Into<String>) -> Self {
        Var { role: Role::Base, name: name.into() }
    }

    pub fn target(i: u32, name: impl Into<String>) -> Self {
        Var { role: Role::Target(i), name: name.into() }
    }

    pub fn diff(i: u32, name: impl Into<String>) -> Self {
        Var { role: Role::Diff(i), name: name.into() }
    }

    pub fn aux(name: impl Into<String>) -> Self {
        Var { role: Role::Aux, name: name.into() }
    }

    /// Role from the conventional input spelling: `x` is base, `y`/`y<k>`
    /// targets, `u`/`u<k>` difference variables, everything else auxiliary.
    pub fn from_name(name: &str) -> Self {
        let (head, digits) = split_trailing_digits(name);
        let index = |d: &str| d.parse::<u32>().ok().filter(|k| *k >= 1);
        match (head, index(digits)) {
            ("x", None) => Var::base(name),
            ("y", None) => Var::target(1, name),
            ("y", Some(k)) | ("y_", Some(k)) => Var::target(k, name),
            ("u", None) => Var::diff(1, name),
            ("u", Some(k)) | ("u_", Some(k)) => Var::diff(k, name),
            _ => Var::aux(name),
        }
    }
}

fn split_trailing_digits(name: &str) -> (&str, &str) {
    let cut = name
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_ascii_digit())
        .map(|(i, _)| i)
        .last()
        .unwrap_or(name.len());
    name.split_at(cut)
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

/// Atomic indeterminate D^order(var) of the ring.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DerIndet {
    pub var: Var,
    pub order: u32,
}

impl DerIndet {
    pub fn new(var: Var, order: u32) -> Self {
        DerIndet { var, order }
    }
}

impl fmt::Display for DerIndet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.order <= 3 {
            write!(f, "{}{}", self.var, "'".repeat(self.order as usize))
        } else {
            write!(f, "D({},{})", self.var, self.order)
        }
    }
}

/// Power product of indeterminates; no zero exponents stored, the empty map
/// is the monomial 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial(BTreeMap<DerIndet, u32>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(BTreeMap::new())
    }

    pub fn indet(d: DerIndet) -> Self {
        let mut m = BTreeMap::new();
        m.insert(d, 1);
        Monomial(m)
    }

    pub fn from_powers(powers: impl IntoIterator<Item = (DerIndet, u32)>) -> Self {
        let mut m = BTreeMap::new();
        for (d, e) in powers {
            if e > 0 {
                *m.entry(d).or_insert(0) += e;
            }
        }
        Monomial(m)
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn powers(&self) -> impl Iterator<Item = (&DerIndet, u32)> {
        self.0.iter().map(|(d, e)| (d, *e))
    }

    pub fn exponent(&self, d: &DerIndet) -> u32 {
        self.0.get(d).copied().unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.0.values().sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut m = self.0.clone();
        for (d, e) in &other.0 {
            *m.entry(d.clone()).or_insert(0) += e;
        }
        Monomial(m)
    }

    /// self / other when every exponent of other fits, else None.
    pub fn try_div(&self, other: &Monomial) -> Option<Monomial> {
        let mut m = self.0.clone();
        for (d, e) in &other.0 {
            let have = m.get_mut(d)?;
            if *have < *e {
                return None;
            }
            *have -= e;
            if *have == 0 {
                m.remove(d);
            }
        }
        Some(Monomial(m))
    }

    /// The part of the monomial lying on variables satisfying `pred`.
    pub fn restrict(&self, pred: impl Fn(&Var) -> bool) -> Monomial {
        Monomial(
            self.0
                .iter()
                .filter(|(d, _)| pred(&d.var))
                .map(|(d, e)| (d.clone(), *e))
                .collect(),
        )
    }

    /// Reverse-lexicographic comparison: walk the union of indeterminates from
    /// the greatest down; the first differing exponent decides, larger wins.
    pub fn cmp_revlex(&self, other: &Monomial) -> Ordering {
        let indets: BTreeSet<&DerIndet> = self.0.keys().chain(other.0.keys()).collect();
        for d in indets.iter().rev() {
            match self.exponent(d).cmp(&other.exponent(d)) {
                Ordering::Equal => {}
                ord => return ord,
            }
        }
        Ordering::Equal
    }

    /// Total degree first, then reverse-lexicographic.
    pub fn cmp_graded_revlex(&self, other: &Monomial) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| self.cmp_revlex(other))
    }

    /// Rendering order: total degree first, then lexicographic from the
    /// smallest indeterminate up (so `x` sorts before `t * y`).
    pub fn cmp_print_order(&self, other: &Monomial) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| {
                let indets: BTreeSet<&DerIndet> = self.0.keys().chain(other.0.keys()).collect();
                for d in indets {
                    match self.exponent(d).cmp(&other.exponent(d)) {
                        Ordering::Equal => {}
                        ord => return ord,
                    }
                }
                Ordering::Equal
            })
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_one() {
            return write!(f, "1");
        }
        let mut first = true;
        for (d, e) in self.powers() {
            if !first {
                write!(f, " * ")?;
            }
            first = false;
            if e == 1 {
                write!(f, "{d}")?;
            } else {
                write!(f, "{d}^{e}")?;
            }
        }
        Ok(())
    }
}

/// Exponent tuple (a0,...,an) of a designated variable, compared in the
/// reverse-lexicographic order: (a) < (b) iff for some k, a_i = b_i for
/// i > k and a_k < b_k.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DegreeVector(pub Vec<u32>);

impl DegreeVector {
    pub fn entry(&self, i: usize) -> u32 {
        self.0.get(i).copied().unwrap_or(0)
    }
}

impl PartialOrd for DegreeVector {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DegreeVector {
    fn cmp(&self, other: &Self) -> Ordering {
        let n = self.0.len().max(other.0.len());
        for i in (0..n).rev() {
            match self.entry(i).cmp(&other.entry(i)) {
                Ordering::Equal => {}
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

impl fmt::Display for DegreeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Sparse differential polynomial: finite map monomial -> Q(t) coefficient.
/// No zero coefficients stored; the empty map is the zero polynomial.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiffPoly(BTreeMap<Monomial, RatFun>);

impl DiffPoly {
    pub fn zero() -> Self {
        DiffPoly(BTreeMap::new())
    }

    pub fn one() -> Self {
        DiffPoly::constant(RatFun::one())
    }

    pub fn constant(c: RatFun) -> Self {
        let mut m = BTreeMap::new();
        if !c.is_zero() {
            m.insert(Monomial::one(), c);
        }
        DiffPoly(m)
    }

    pub fn from_int(n: i64) -> Self {
        DiffPoly::constant(RatFun::from_int(n))
    }

    /// The coefficient t as an element of the ring.
    pub fn t() -> Self {
        DiffPoly::constant(RatFun::t())
    }

    pub fn var(v: Var) -> Self {
        DiffPoly::der_indet(v, 0)
    }

    /// The indeterminate D^k(v).
    pub fn der_indet(v: Var, k: u32) -> Self {
        DiffPoly::term(Monomial::indet(DerIndet::new(v, k)), RatFun::one())
    }

    pub fn term(m: Monomial, c: RatFun) -> Self {
        let mut map = BTreeMap::new();
        if !c.is_zero() {
            map.insert(m, c);
        }
        DiffPoly(map)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &RatFun)> {
        self.0.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.0.len()
    }

    pub fn coefficient(&self, m: &Monomial) -> RatFun {
        self.0.get(m).cloned().unwrap_or_else(RatFun::zero)
    }

    fn insert_add(map: &mut BTreeMap<Monomial, RatFun>, m: Monomial, c: RatFun) {
        if c.is_zero() {
            return;
        }
        match map.get_mut(&m) {
            Some(existing) => {
                let sum = &*existing + &c;
                if sum.is_zero() {
                    map.remove(&m);
                } else {
                    *existing = sum;
                }
            }
            None => {
                map.insert(m, c);
            }
        }
    }

    pub fn scalar_mul(&self, c: &RatFun) -> DiffPoly {
        if c.is_zero() {
            return DiffPoly::zero();
        }
        DiffPoly(self.0.iter().map(|(m, a)| (m.clone(), a * c)).collect())
    }

    pub fn pow(&self, e: u32) -> DiffPoly {
        let mut acc = DiffPoly::one();
        for _ in 0..e {
            acc = &acc * self;
        }
        acc
    }

    /// Every variable occurring in the polynomial.
    pub fn vars(&self) -> BTreeSet<Var> {
        self.0
            .keys()
            .flat_map(|m| m.powers().map(|(d, _)| d.var.clone()))
            .collect()
    }

    /// Max derivative order of v occurring, or None when v is absent.
    pub fn order_of(&self, v: &Var) -> Option<u32> {
        self.0
            .keys()
            .flat_map(|m| m.powers())
            .filter(|(d, _)| &d.var == v)
            .map(|(d, _)| d.order)
            .max()
    }

    /// Max derivative order over all variables (0 for constants).
    pub fn max_order(&self) -> u32 {
        self.0
            .keys()
            .flat_map(|m| m.powers())
            .map(|(d, _)| d.order)
            .max()
            .unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.0.keys().map(Monomial::total_degree).max().unwrap_or(0)
    }

    /// Largest monomial in the graded reverse-lexicographic order.
    pub fn leading_monomial_graded_revlex(&self) -> Option<&Monomial> {
        self.0.keys().max_by(|a, b| a.cmp_graded_revlex(b))
    }

    /// The (n+1)-degree of a polynomial in v alone: the reverse-lex-greatest
    /// exponent tuple (a0,...,an) over its monomials, with n = order in v.
    pub fn n1_degree(&self, v: &Var) -> Result<DegreeVector, DiffPolyError> {
        if self.is_zero() {
            return Err(DiffPolyError::ZeroPolynomial);
        }
        for var in self.vars() {
            if &var != v {
                return Err(DiffPolyError::ForeignVariable(v.name.clone()));
            }
        }
        let n = self.order_of(v).unwrap_or(0) as usize;
        let mut best: Option<DegreeVector> = None;
        for m in self.0.keys() {
            let mut tuple = vec![0u32; n + 1];
            for (d, e) in m.powers() {
                tuple[d.order as usize] += e;
            }
            let dv = DegreeVector(tuple);
            if best.as_ref().is_none_or(|b| dv > *b) {
                best = Some(dv);
            }
        }
        Ok(best.unwrap())
    }

    /// Formal derivation: coefficients by d/dt, D(D^k v) = D^(k+1) v,
    /// products by Leibniz.
    pub fn formal_derive(&self) -> DiffPoly {
        let mut out = BTreeMap::new();
        for (m, c) in &self.0 {
            // Coefficient part.
            Self::insert_add(&mut out, m.clone(), c.derivative());
            // Monomial part: differentiate one factor at a time.
            for (d, e) in m.powers() {
                let mut rest = m.clone();
                let reduced = rest.0.get_mut(d).unwrap();
                *reduced -= 1;
                if *reduced == 0 {
                    rest.0.remove(d);
                }
                let bumped = DerIndet::new(d.var.clone(), d.order + 1);
                let new_m = rest.mul(&Monomial::indet(bumped));
                Self::insert_add(&mut out, new_m, c * &RatFun::from_rational(rat(e as i64)));
            }
        }
        DiffPoly(out)
    }

    pub fn iterated_derive(&self, k: u32) -> DiffPoly {
        let mut f = self.clone();
        for _ in 0..k {
            f = f.formal_derive();
        }
        f
    }

    /// The differential-ring endomorphism fixing Q(t), determined by images of
    /// the order-0 indeterminates: D^k v maps to D^k(image(v)). Variables not
    /// in the map are left alone.
    pub fn subst_diff(&self, images: &BTreeMap<Var, DiffPoly>) -> DiffPoly {
        let mut cache: BTreeMap<(Var, u32), DiffPoly> = BTreeMap::new();
        let mut out = DiffPoly::zero();
        for (m, c) in &self.0 {
            let mut term = DiffPoly::constant(c.clone());
            for (d, e) in m.powers() {
                let img = match images.get(&d.var) {
                    None => DiffPoly::der_indet(d.var.clone(), d.order),
                    Some(base) => cache
                        .entry((d.var.clone(), d.order))
                        .or_insert_with(|| base.iterated_derive(d.order))
                        .clone(),
                };
                term = &term * &img.pow(e);
            }
            out = &out + &term;
        }
        out
    }

    /// Replace v by a*v + b; requires a != 0.
    pub fn subst_affine(&self, v: &Var, a: &RatFun, b: &RatFun) -> Result<DiffPoly, DiffPolyError> {
        if a.is_zero() {
            return Err(DiffPolyError::ZeroScale);
        }
        let image = &DiffPoly::var(v.clone()).scalar_mul(a) + &DiffPoly::constant(b.clone());
        let mut map = BTreeMap::new();
        map.insert(v.clone(), image);
        Ok(self.subst_diff(&map))
    }

    /// The graph-compatible joint substitution on x and the y-chain:
    /// x maps to a*x + b and each y_i picks up exactly the terms forced by
    /// pretending y_i = D^i x, i.e. the general-Leibniz image of D^i(a*x + b)
    /// with D^j x renamed back to y_j (y_0 = x).
    pub fn subst_graph_pair(
        &self,
        x: &Var,
        chain: &[Var],
        a: &RatFun,
        b: &RatFun,
    ) -> Result<DiffPoly, DiffPolyError> {
        let map = graph_subst_map(x, chain, a, b)?;
        Ok(self.subst_diff(&map))
    }

    /// Substitute D^j y_i -> D^(j+i) x, collapsing onto the graph chain.
    pub fn collapse_to_graph(&self, x: &Var, chain: &[Var]) -> DiffPoly {
        let map = chain
            .iter()
            .enumerate()
            .map(|(i, y)| (y.clone(), DiffPoly::der_indet(x.clone(), i as u32 + 1)))
            .collect();
        self.subst_diff(&map)
    }

    /// Substitute D^j y_i -> D^j u_i + D^(j+i) x, moving to difference
    /// coordinates u_i = y_i - D^i x.
    pub fn to_u_coordinates(&self, x: &Var, chain: &[Var], us: &[Var]) -> DiffPoly {
        let map = chain
            .iter()
            .zip(us)
            .enumerate()
            .map(|(i, (y, u))| {
                let img = &DiffPoly::var(u.clone())
                    + &DiffPoly::der_indet(x.clone(), i as u32 + 1);
                (y.clone(), img)
            })
            .collect();
        self.subst_diff(&map)
    }

    /// Set every u-chain variable to 0. For a polynomial in u-coordinates this
    /// extracts the constant-U part, which vanishes exactly when the original
    /// curve contains the graph.
    pub fn collapse_u(&self, us: &[Var]) -> DiffPoly {
        let map = us.iter().map(|u| (u.clone(), DiffPoly::zero())).collect();
        self.subst_diff(&map)
    }

    /// Exact evaluation with every variable assigned an element of Q(t);
    /// D^k v evaluates to the k-th d/dt derivative of the assigned value.
    pub fn eval_ratfun(&self, asg: &BTreeMap<Var, RatFun>) -> Result<RatFun, DiffPolyError> {
        let mut cache: BTreeMap<(Var, u32), RatFun> = BTreeMap::new();
        let mut acc = RatFun::zero();
        for (m, c) in &self.0 {
            let mut term = c.clone();
            for (d, e) in m.powers() {
                let base = asg
                    .get(&d.var)
                    .ok_or_else(|| DiffPolyError::MissingAssignment(d.var.name.clone()))?;
                let val = cache
                    .entry((d.var.clone(), d.order))
                    .or_insert_with(|| {
                        let mut v = base.clone();
                        for _ in 0..d.order {
                            v = v.derivative();
                        }
                        v
                    })
                    .clone();
                term = &term * &val.pow(e);
            }
            acc = &acc + &term;
        }
        Ok(acc)
    }

    /// Some(c) when self = c * other with c in Q(t) nonzero (both nonzero);
    /// Some(0)-like cases are excluded. Zero = zero yields Some(1).
    pub fn proportional_to(&self, other: &DiffPoly) -> Option<RatFun> {
        if self.is_zero() && other.is_zero() {
            return Some(RatFun::one());
        }
        if self.is_zero() || other.is_zero() {
            return None;
        }
        if self.0.len() != other.0.len() {
            return None;
        }
        let (m0, c0) = other.0.iter().next().unwrap();
        let mine = self.0.get(m0)?;
        let ratio = mine.div(c0).ok()?;
        if self == &other.scalar_mul(&ratio) {
            Some(ratio)
        } else {
            None
        }
    }

    /// Exact multivariate division: Some(q) with self = q * divisor, else None.
    /// Uses the graded reverse-lexicographic leading-term loop.
    pub fn exact_div(&self, divisor: &DiffPoly) -> Option<DiffPoly> {
        if divisor.is_zero() {
            return None;
        }
        let dm = divisor.leading_monomial_graded_revlex().unwrap().clone();
        let dc = divisor.coefficient(&dm);
        let mut rem = self.clone();
        let mut quot = DiffPoly::zero();
        while !rem.is_zero() {
            let lm = rem.leading_monomial_graded_revlex().unwrap().clone();
            let lc = rem.coefficient(&lm);
            let factor_m = lm.try_div(&dm)?;
            let factor = DiffPoly::term(factor_m, lc.div(&dc).ok()?);
            rem = &rem - &(&factor * divisor);
            quot = &quot + &factor;
        }
        Some(quot)
    }
}

/// Images for the graph-compatible substitution (x, y1..yn) induced by
/// x -> a*x + b: y_i maps to sum_j C(i,j) * a^(j) * y_(i-j) + b^(i), derived
/// by formally differentiating a*X + b i times and renaming D^j X to y_j.
pub fn graph_subst_map(
    x: &Var,
    chain: &[Var],
    a: &RatFun,
    b: &RatFun,
) -> Result<BTreeMap<Var, DiffPoly>, DiffPolyError> {
    if a.is_zero() {
        return Err(DiffPolyError::ZeroScale);
    }
    let mut map = BTreeMap::new();
    let x_image = &DiffPoly::var(x.clone()).scalar_mul(a) + &DiffPoly::constant(b.clone());
    map.insert(x.clone(), x_image.clone());
    let mut derived = x_image;
    for y in chain {
        derived = derived.formal_derive();
        // Rename D^j x back to the chain coordinate y_j (y_0 = x).
        let mut image = DiffPoly::zero();
        for (m, c) in derived.terms() {
            let mut term = DiffPoly::constant(c.clone());
            for (d, e) in m.powers() {
                debug_assert_eq!(&d.var, x);
                let coord = if d.order == 0 {
                    DiffPoly::var(x.clone())
                } else {
                    DiffPoly::var(chain[d.order as usize - 1].clone())
                };
                term = &term * &coord.pow(e);
            }
            image = &image + &term;
        }
        map.insert(y.clone(), image);
    }
    Ok(map)
}

/// Images for the induced substitution on difference coordinates: x -> a*x + b
/// and u_i -> sum_(j<i) C(i,j) * a^(j) * u_(i-j) (u_0 = 0, b drops out).
pub fn u_subst_map(
    x: &Var,
    us: &[Var],
    a: &RatFun,
    b: &RatFun,
) -> Result<BTreeMap<Var, DiffPoly>, DiffPolyError> {
    if a.is_zero() {
        return Err(DiffPolyError::ZeroScale);
    }
    let mut map = BTreeMap::new();
    map.insert(
        x.clone(),
        &DiffPoly::var(x.clone()).scalar_mul(a) + &DiffPoly::constant(b.clone()),
    );
    // Derivatives of a, computed once.
    let n = us.len();
    let mut a_der = vec![a.clone()];
    for _ in 0..n {
        a_der.push(a_der.last().unwrap().derivative());
    }
    for (idx, u) in us.iter().enumerate() {
        let i = idx + 1;
        let mut image = DiffPoly::zero();
        for j in 0..i {
            // coefficient C(i,j) * a^(j), target u_(i-j); i-j >= 1 since j < i.
            let c = &RatFun::from_rational(rat(binomial(i as u64, j as u64) as i64)) * &a_der[j];
            let target = DiffPoly::var(us[i - j - 1].clone());
            image = &image + &target.scalar_mul(&c);
        }
        map.insert(u.clone(), image);
    }
    Ok(map)
}

fn binomial(n: u64, k: u64) -> u64 {
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

impl Add for &DiffPoly {
    type Output = DiffPoly;
    fn add(self, rhs: &DiffPoly) -> DiffPoly {
        let mut out = self.0.clone();
        for (m, c) in &rhs.0 {
            DiffPoly::insert_add(&mut out, m.clone(), c.clone());
        }
        DiffPoly(out)
    }
}

impl Sub for &DiffPoly {
    type Output = DiffPoly;
    fn sub(self, rhs: &DiffPoly) -> DiffPoly {
        self + &(-rhs)
    }
}

impl Neg for &DiffPoly {
    type Output = DiffPoly;
    fn neg(self) -> DiffPoly {
        DiffPoly(self.0.iter().map(|(m, c)| (m.clone(), -c)).collect())
    }
}

impl Mul for &DiffPoly {
    type Output = DiffPoly;
    fn mul(self, rhs: &DiffPoly) -> DiffPoly {
        let mut out = BTreeMap::new();
        for (m1, c1) in &self.0 {
            for (m2, c2) in &rhs.0 {
                DiffPoly::insert_add(&mut out, m1.mul(m2), c1 * c2);
            }
        }
        DiffPoly(out)
    }
}

fn coeff_needs_parens(c: &RatFun) -> bool {
    if !c.is_polynomial() {
        return true;
    }
    let p = c.numerator();
    let nonzero = p.coeffs().iter().filter(|a| !a.is_zero()).count();
    nonzero > 1
}

impl fmt::Display for DiffPoly {
    /// Canonical rendering with a deterministic term order (leading monomials
    /// first in graded reverse-lex), e.g. `(t^2 - t) * x * x' + 1/2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        // Degree descending, positive terms before negative, then by the
        // earliest differing indeterminate.
        let is_neg = |c: &RatFun| matches!(c.as_rational(), Some(q) if q < Rational::zero());
        let mut monos: Vec<&Monomial> = self.0.keys().collect();
        monos.sort_by(|a, b| {
            b.total_degree()
                .cmp(&a.total_degree())
                .then_with(|| is_neg(&self.0[*a]).cmp(&is_neg(&self.0[*b])))
                .then_with(|| b.cmp_print_order(a))
        });
        let mut first = true;
        for m in monos {
            let c = &self.0[m];
            let (neg, abs) = match c.as_rational() {
                Some(q) if q < Rational::zero() => {
                    (true, RatFun::from_rational(-q))
                }
                _ => (false, c.clone()),
            };
            if first {
                if neg {
                    write!(f, "-")?;
                }
                first = false;
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let coeff_str = if coeff_needs_parens(&abs) {
                format!("({abs})")
            } else {
                format!("{abs}")
            };
            if m.is_one() {
                write!(f, "{coeff_str}")?;
            } else if abs.is_one() {
                write!(f, "{m}")?;
            } else {
                write!(f, "{coeff_str} * {m}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratfun::{ratio, Poly};

    fn x() -> Var {
        Var::base("x")
    }

    fn y() -> Var {
        Var::target(1, "y")
    }

    fn u() -> Var {
        Var::diff(1, "u")
    }

    fn xv(k: u32) -> DiffPoly {
        DiffPoly::der_indet(x(), k)
    }

    fn yv(k: u32) -> DiffPoly {
        DiffPoly::der_indet(y(), k)
    }

    #[test]
    fn ring_ops_cancel() {
        let a = &xv(0) + &xv(1);
        let b = &xv(0) - &xv(1);
        assert_eq!(&a + &b, xv(0).scalar_mul(&RatFun::from_int(2)));
    }

    #[test]
    fn ring_ops_product_expansion() {
        // (Y - DX)(Y + DX) = Y^2 - (DX)^2
        let lhs = &(&yv(0) - &xv(1)) * &(&yv(0) + &xv(1));
        let rhs = &(&yv(0) * &yv(0)) - &(&xv(1) * &xv(1));
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn formal_derive_power() {
        // D(X^2) = 2 X DX
        let f = &xv(0) * &xv(0);
        let expected = (&xv(0) * &xv(1)).scalar_mul(&RatFun::from_int(2));
        assert_eq!(f.formal_derive(), expected);
    }

    #[test]
    fn formal_derive_coefficient() {
        // D(t X) = t DX + X
        let f = xv(0).scalar_mul(&RatFun::t());
        let expected = &xv(1).scalar_mul(&RatFun::t()) + &xv(0);
        assert_eq!(f.formal_derive(), expected);
    }

    #[test]
    fn formal_derive_higher() {
        // D(t D^2 X) = t D^3 X + D^2 X
        let f = xv(2).scalar_mul(&RatFun::t());
        let expected = &xv(3).scalar_mul(&RatFun::t()) + &xv(2);
        assert_eq!(f.formal_derive(), expected);
    }

    #[test]
    fn iterated_derive_tx() {
        let f = xv(0).scalar_mul(&RatFun::t());
        // D^2(tX) = t D^2 X + 2 DX
        let expected2 = &xv(2).scalar_mul(&RatFun::t()) + &xv(1).scalar_mul(&RatFun::from_int(2));
        assert_eq!(f.iterated_derive(2), expected2);
        // D^3(tX) = t D^3 X + 3 D^2 X
        let expected3 = &xv(3).scalar_mul(&RatFun::t()) + &xv(2).scalar_mul(&RatFun::from_int(3));
        assert_eq!(f.iterated_derive(3), expected3);
        // k = 0 is the identity.
        assert_eq!(f.iterated_derive(0), f);
    }

    #[test]
    fn order_of_reads_max_order() {
        let f = &yv(0) - &xv(2);
        assert_eq!(f.order_of(&x()), Some(2));
        assert_eq!(f.order_of(&y()), Some(0));
        assert_eq!(DiffPoly::t().pow(3).order_of(&x()), None);
    }

    #[test]
    fn n1_degree_examples() {
        // X*DX + X^3 has (1,1) > (3,0) in reverse-lex.
        let f = &(&xv(0) * &xv(1)) + &xv(0).pow(3);
        assert_eq!(f.n1_degree(&x()).unwrap(), DegreeVector(vec![1, 1]));
        assert_eq!(xv(1).n1_degree(&x()).unwrap(), DegreeVector(vec![0, 1]));
        // X^2 D^2 X + X (DX)^5: (2,0,1) > (1,5,0).
        let g = &(&xv(0).pow(2) * &xv(2)) + &(&xv(0) * &xv(1).pow(5));
        assert_eq!(g.n1_degree(&x()).unwrap(), DegreeVector(vec![2, 0, 1]));
        assert_eq!(
            DiffPoly::zero().n1_degree(&x()),
            Err(DiffPolyError::ZeroPolynomial)
        );
    }

    #[test]
    fn degree_vector_order_exhaustive_small() {
        // Oracle: direct tuple comparison on all tuples <= (3,3,3).
        let tuples: Vec<Vec<u32>> = (0..4)
            .flat_map(|a| (0..4).flat_map(move |b| (0..4).map(move |c| vec![a, b, c])))
            .collect();
        for ta in &tuples {
            for tb in &tuples {
                let expected = ta
                    .iter()
                    .rev()
                    .cmp(tb.iter().rev());
                assert_eq!(
                    DegreeVector(ta.clone()).cmp(&DegreeVector(tb.clone())),
                    expected
                );
            }
        }
    }

    #[test]
    fn subst_affine_scale() {
        // DX under x -> t*x gives t DX + X
        let got = xv(1).subst_affine(&x(), &RatFun::t(), &RatFun::zero()).unwrap();
        let expected = &xv(1).scalar_mul(&RatFun::t()) + &xv(0);
        assert_eq!(got, expected);
    }

    #[test]
    fn subst_affine_shift() {
        let got = xv(0)
            .subst_affine(&x(), &RatFun::one(), &RatFun::t())
            .unwrap();
        assert_eq!(got, &xv(0) + &DiffPoly::t());
        // D^2 X under x -> x + t^2 gives D^2 X + 2; oracle: iterated_derive.
        let shifted = xv(2)
            .subst_affine(
                &x(),
                &RatFun::one(),
                &RatFun::from_poly(Poly::monomial(rat(1), 2)),
            )
            .unwrap();
        assert_eq!(shifted, &xv(2) + &DiffPoly::from_int(2));
        let oracle = &(&xv(0) + &DiffPoly::constant(RatFun::from_poly(Poly::monomial(rat(1), 2))))
            .iterated_derive(2)
            - &xv(0).iterated_derive(2);
        assert_eq!(shifted, &xv(2) + &oracle);
        assert_eq!(
            xv(0).subst_affine(&x(), &RatFun::zero(), &RatFun::zero()),
            Err(DiffPolyError::ZeroScale)
        );
    }

    #[test]
    fn subst_graph_pair_scales_u() {
        // Y - DX under (x,y) -> (tx, ty + x) becomes t(Y - DX).
        let f = &yv(0) - &xv(1);
        let got = f
            .subst_graph_pair(&x(), &[y()], &RatFun::t(), &RatFun::zero())
            .unwrap();
        assert_eq!(got, f.scalar_mul(&RatFun::t()));
    }

    #[test]
    fn subst_graph_pair_shift() {
        // Y under (alpha, beta) = (1, t) becomes Y + 1.
        let got = yv(0)
            .subst_graph_pair(&x(), &[y()], &RatFun::one(), &RatFun::t())
            .unwrap();
        assert_eq!(got, &yv(0) + &DiffPoly::one());
    }

    #[test]
    fn subst_graph_pair_chain() {
        // Y_2 under alpha = t: t*Y_2 + 2*Y_1.
        let y1 = Var::target(1, "y1");
        let y2 = Var::target(2, "y2");
        let got = DiffPoly::var(y2.clone())
            .subst_graph_pair(&x(), &[y1.clone(), y2.clone()], &RatFun::t(), &RatFun::zero())
            .unwrap();
        let expected = &DiffPoly::var(y2).scalar_mul(&RatFun::t())
            + &DiffPoly::var(y1).scalar_mul(&RatFun::from_int(2));
        assert_eq!(got, expected);
    }

    #[test]
    fn u_subst_rule_matches_chain() {
        // u_i -> t u_i + i u_(i-1) with u_0 = 0 under alpha = t.
        let u1 = Var::diff(1, "u1");
        let u2 = Var::diff(2, "u2");
        let map = u_subst_map(&x(), &[u1.clone(), u2.clone()], &RatFun::t(), &RatFun::zero())
            .unwrap();
        assert_eq!(map[&u1], DiffPoly::var(u1.clone()).scalar_mul(&RatFun::t()));
        let expected = &DiffPoly::var(u2.clone()).scalar_mul(&RatFun::t())
            + &DiffPoly::var(u1).scalar_mul(&RatFun::from_int(2));
        assert_eq!(map[&u2], expected);
    }

    #[test]
    fn collapse_examples() {
        assert!((&yv(0) - &xv(1)).collapse_to_graph(&x(), &[y()]).is_zero());
        // (DY - D^2 X) * DX contains the graph.
        let f = &(&yv(1) - &xv(2)) * &xv(1);
        assert!(f.collapse_to_graph(&x(), &[y()]).is_zero());
        let g = &yv(0) - &xv(0);
        assert_eq!(g.collapse_to_graph(&x(), &[y()]), &xv(1) - &xv(0));
    }

    #[test]
    fn u_coordinates_examples() {
        let us = [u()];
        assert_eq!(
            (&yv(0) - &xv(1)).to_u_coordinates(&x(), &[y()], &us),
            DiffPoly::var(u())
        );
        let f = &(&yv(1) - &xv(2)) * &xv(1);
        assert_eq!(
            f.to_u_coordinates(&x(), &[y()], &us),
            &DiffPoly::der_indet(u(), 1) * &xv(1)
        );
        // Y^2 -> U^2 + 2 U DX + (DX)^2; oracle: expand (U + DX)^2.
        let sq = yv(0).pow(2).to_u_coordinates(&x(), &[y()], &us);
        let oracle = (&DiffPoly::var(u()) + &xv(1)).pow(2);
        assert_eq!(sq, oracle);
    }

    #[test]
    fn collapse_after_u_coordinates_recovers_collapse() {
        let f = &(&yv(1) - &xv(2)) * &(&yv(0) + &xv(0));
        let us = [u()];
        let via_u = f.to_u_coordinates(&x(), &[y()], &us).collapse_u(&us);
        assert_eq!(via_u, f.collapse_to_graph(&x(), &[y()]));
    }

    #[test]
    fn eval_ratfun_examples() {
        let mut asg = BTreeMap::new();
        asg.insert(x(), RatFun::t());
        let f = &xv(1) - &DiffPoly::one();
        assert!(f.eval_ratfun(&asg).unwrap().is_zero());

        let mut asg2 = BTreeMap::new();
        asg2.insert(x(), RatFun::from_poly(Poly::monomial(rat(2), 1)));
        assert_eq!(f.eval_ratfun(&asg2).unwrap(), RatFun::one());

        let mut asg3 = BTreeMap::new();
        asg3.insert(x(), RatFun::from_poly(Poly::monomial(rat(1), 2)));
        let g = &xv(0) * &xv(1);
        assert_eq!(
            g.eval_ratfun(&asg3).unwrap(),
            RatFun::from_poly(Poly::monomial(rat(2), 3))
        );
    }

    #[test]
    fn eval_commutes_with_derivation() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let f = crate::corpus::random_diffpoly(
                &mut rng,
                &[x(), y()],
                2,
                3,
                3,
                2,
            );
            let mut asg = BTreeMap::new();
            for v in [x(), y()] {
                let p = Poly::new(
                    (0..3)
                        .map(|_| ratio(rng.random_range(-5..=5), rng.random_range(1..=3)))
                        .collect(),
                );
                asg.insert(v, RatFun::from_poly(p));
            }
            let lhs = f.formal_derive().eval_ratfun(&asg).unwrap();
            let rhs = f.eval_ratfun(&asg).unwrap().derivative();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn leibniz_law_randomized() {
        use rand::rngs::StdRng;
        use rand::SeedableRng;
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..200 {
            let f = crate::corpus::random_diffpoly(&mut rng, &[x(), y()], 2, 2, 3, 1);
            let g = crate::corpus::random_diffpoly(&mut rng, &[x(), y()], 2, 2, 3, 1);
            let lhs = (&f * &g).formal_derive();
            let rhs = &(&f * &g.formal_derive()) + &(&g * &f.formal_derive());
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn substitution_is_ring_homomorphism() {
        use rand::rngs::StdRng;
        use rand::SeedableRng;
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..100 {
            let f = crate::corpus::random_diffpoly(&mut rng, &[x()], 2, 2, 3, 1);
            let g = crate::corpus::random_diffpoly(&mut rng, &[x()], 2, 2, 3, 1);
            let a = RatFun::t();
            let b = RatFun::from_int(3);
            let sub = |p: &DiffPoly| p.subst_affine(&x(), &a, &b).unwrap();
            assert_eq!(sub(&(&f + &g)), &sub(&f) + &sub(&g));
            assert_eq!(sub(&(&f * &g)), &sub(&f) * &sub(&g));
        }
    }

    #[test]
    fn derive_substitution_chain_rule() {
        // iterated_derive(a*v + b, k) = subst_affine(iterated_derive(v, k)) for k <= 5.
        let a = RatFun::t();
        let b = RatFun::from_poly(Poly::monomial(rat(2), 3));
        let image = &DiffPoly::var(x()).scalar_mul(&a) + &DiffPoly::constant(b.clone());
        for k in 0..=5u32 {
            let lhs = image.iterated_derive(k);
            let rhs = xv(0)
                .iterated_derive(k)
                .subst_affine(&x(), &a, &b)
                .unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn proportionality_detection() {
        let f = &(&xv(0) * &xv(1)) + &DiffPoly::t();
        let g = f.scalar_mul(&RatFun::from_poly(Poly::monomial(rat(-2), 2)));
        let c = g.proportional_to(&f).unwrap();
        assert_eq!(c, RatFun::from_poly(Poly::monomial(rat(-2), 2)));
        assert!(xv(0).proportional_to(&yv(0)).is_none());
    }

    #[test]
    fn exact_division() {
        let p = &yv(0) - &xv(1);
        let q = &(&xv(0) * &xv(0)) + &DiffPoly::one();
        let f = &p * &q;
        assert_eq!(f.exact_div(&p).unwrap(), q);
        assert!((&f + &DiffPoly::one()).exact_div(&p).is_none());
    }

    #[test]
    fn display_canonical() {
        let f = &(&(&xv(0) * &xv(1)) * &yv(2)).scalar_mul(&RatFun::new(
            Poly::new(vec![rat(0), rat(-1), rat(1)]),
            Poly::one(),
        ).unwrap()) + &DiffPoly::constant(RatFun::from_rational(ratio(1, 2)));
        assert_eq!(f.to_string(), "(t^2 - t) * x * x' * y'' + 1/2");
    }
}
