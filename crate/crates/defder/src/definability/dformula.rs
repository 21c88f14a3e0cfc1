//! The empirical D-formula test: a candidate formula should hold at a
//! pseudo-generic graph tuple (a, Da, ..., D^n a) and fail when the targets
//! are replaced by independent random series. Probabilistic evidence only,
//! clearly labeled as such; the symbolic replay is the trust anchor.

use crate::diffpoly::{DerIndet, DiffPoly, Var};
use crate::formula::{eval_formula, Formula, FormulaError, ModelEnv, RelationSpec, Value};
use crate::series::{random_generic, ModelConfig, SeriesError, TruncSeries};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DFormulaVerdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Outcome of the sampling run.
#[derive(Debug, Clone)]
pub struct DFormulaReport {
    pub samples: usize,
    pub positive_failures: usize,
    pub negative_failures: usize,
    pub inconclusive: usize,
    pub seed: u64,
    pub truncation: usize,
    pub verdict: DFormulaVerdict,
}

/// Run one sample with its own seeded generator so results are identical
/// whether samples run sequentially or in parallel.
fn sample_seed(base: u64, i: u64) -> u64 {
    base ^ (i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub(crate) struct SampleOutcome {
    pub positive_ok: bool,
    pub negative_ok: bool,
    pub inconclusive: bool,
}

/// Evaluate the formula at the graph tuple and at an off-graph tuple for one
/// sample index. The free-variable tuple (x, targets) may differ from the
/// relation's own slots (the algebraic front-end samples (x, y1..yn) against
/// a binary relation).
pub(crate) fn one_sample(
    formula: &Formula,
    spec: &RelationSpec,
    x: &Var,
    targets: &[Var],
    witnesses: &BTreeMap<Var, DiffPoly>,
    cfg: &ModelConfig,
    sample: u64,
) -> SampleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, sample));
    let env = ModelEnv::series(spec, cfg.clone());
    let a = random_generic(cfg, &mut rng);

    let mut graph_asg: BTreeMap<Var, Value> = BTreeMap::new();
    graph_asg.insert(x.clone(), Value::Series(a.clone()));
    let mut derivative = a.clone();
    let mut graph_values = Vec::new();
    for y in targets {
        derivative = derivative.derive();
        graph_asg.insert(y.clone(), Value::Series(derivative.clone()));
        graph_values.push(derivative.clone());
    }

    let positive = eval_with_resultant_fallback(&env, formula, spec, &graph_asg, witnesses);

    let mut off_asg: BTreeMap<Var, Value> = BTreeMap::new();
    off_asg.insert(x.clone(), Value::Series(a.clone()));
    for (y, graph_val) in targets.iter().zip(&graph_values) {
        let mut b = random_generic(cfg, &mut rng);
        while b.eq_up_to_known(graph_val) {
            b = random_generic(cfg, &mut rng);
        }
        off_asg.insert(y.clone(), Value::Series(b));
    }
    let negative = eval_with_resultant_fallback(&env, formula, spec, &off_asg, witnesses);

    match (positive, negative) {
        (Ok(p), Ok(n)) => SampleOutcome {
            positive_ok: p,
            negative_ok: !n,
            inconclusive: false,
        },
        (Err(FormulaError::UnwitnessedQuantifier(_)), _)
        | (_, Err(FormulaError::UnwitnessedQuantifier(_)))
        | (Err(FormulaError::Series(SeriesError::InsufficientTruncation { .. })), _)
        | (_, Err(FormulaError::Series(SeriesError::InsufficientTruncation { .. }))) => {
            SampleOutcome {
                positive_ok: true,
                negative_ok: true,
                inconclusive: true,
            }
        }
        _ => SampleOutcome {
            positive_ok: false,
            negative_ok: false,
            inconclusive: false,
        },
    }
}

/// Samples a candidate definition: pass iff the formula holds at every graph
/// tuple and fails at every off-graph tuple drawn. The free tuple is the
/// relation's own (x, chain).
pub fn is_d_formula(
    formula: &Formula,
    spec: &RelationSpec,
    witnesses: &BTreeMap<Var, DiffPoly>,
    cfg: &ModelConfig,
    samples: usize,
) -> DFormulaReport {
    is_d_formula_over(
        formula,
        spec,
        &spec.x.clone(),
        &spec.chain.clone(),
        witnesses,
        cfg,
        samples,
    )
}

/// Sampling with an explicit free-variable tuple (x, targets), where target i
/// stands for D^i x at graph points.
pub fn is_d_formula_over(
    formula: &Formula,
    spec: &RelationSpec,
    x: &Var,
    targets: &[Var],
    witnesses: &BTreeMap<Var, DiffPoly>,
    cfg: &ModelConfig,
    samples: usize,
) -> DFormulaReport {
    let outcomes = crate::verify::run_samples(samples, |i| {
        one_sample(formula, spec, x, targets, witnesses, cfg, i)
    });
    let positive_failures = outcomes.iter().filter(|o| !o.positive_ok).count();
    let negative_failures = outcomes.iter().filter(|o| !o.negative_ok).count();
    let inconclusive = outcomes.iter().filter(|o| o.inconclusive).count();
    let verdict = if inconclusive > 0 {
        DFormulaVerdict::Inconclusive
    } else if positive_failures == 0 && negative_failures == 0 {
        DFormulaVerdict::Pass
    } else {
        DFormulaVerdict::Fail
    };
    DFormulaReport {
        samples,
        positive_failures,
        negative_failures,
        inconclusive,
        seed: cfg.seed,
        truncation: cfg.truncation,
        verdict,
    }
}

/// Evaluate; for the algebraic-front shape `exists z. (E(x, z) & q(z) = 0)`
/// existence of z is decided by the resultant of the two z-polynomials over
/// the series model (no rational witness exists in general), everything else
/// goes through the witnessed evaluator.
fn eval_with_resultant_fallback(
    env: &ModelEnv,
    formula: &Formula,
    spec: &RelationSpec,
    asg: &BTreeMap<Var, Value>,
    witnesses: &BTreeMap<Var, DiffPoly>,
) -> Result<bool, FormulaError> {
    if let Some((z, rel_args, q)) = match_algebraic_shape(formula, spec) {
        if !witnesses.contains_key(&z) {
            return eval_algebraic_shape(env, spec, &z, &rel_args, &q, asg);
        }
    }
    eval_formula(env, formula, asg, witnesses)
}

/// Matches `exists z. (Rel(E, x-arg, z) & Eq(q))` with q mentioning z.
fn match_algebraic_shape(
    formula: &Formula,
    spec: &RelationSpec,
) -> Option<(Var, Vec<crate::formula::AlgTerm>, DiffPoly)> {
    let Formula::Exists { vars, body } = formula else {
        return None;
    };
    if vars.len() != 1 {
        return None;
    }
    let z = vars[0].clone();
    let Formula::And(parts) = body.as_ref() else {
        return None;
    };
    if parts.len() != 2 {
        return None;
    }
    let Formula::Rel { name, args } = &parts[0] else {
        return None;
    };
    if name != &spec.name {
        return None;
    }
    let Formula::Eq(q) = &parts[1] else {
        return None;
    };
    if q.poly().order_of(&z).is_none() {
        return None;
    }
    Some((z, args.clone(), q.poly().clone()))
}

fn eval_algebraic_shape(
    env: &ModelEnv,
    spec: &RelationSpec,
    z: &Var,
    rel_args: &[crate::formula::AlgTerm],
    q: &DiffPoly,
    asg: &BTreeMap<Var, Value>,
) -> Result<bool, FormulaError> {
    let cfg = match &env.backend {
        crate::formula::Backend::Series(cfg) => cfg.clone(),
        crate::formula::Backend::Exact => {
            return Err(FormulaError::Eval(
                "resultant evaluation needs the series model".into(),
            ))
        }
    };
    // The last relation slot takes z; earlier slots take the argument values.
    let mut slot_asg: BTreeMap<Var, Value> = BTreeMap::new();
    let slots = spec.slots();
    for (slot, arg) in slots.iter().zip(rel_args) {
        if arg.poly() == &DiffPoly::var(z.clone()) {
            continue;
        }
        slot_asg.insert(slot.clone(), env.eval_poly(arg.poly(), asg)?);
    }
    let z_slot = slots
        .iter()
        .zip(rel_args)
        .find(|(_, arg)| arg.poly() == &DiffPoly::var(z.clone()))
        .map(|(s, _)| s.clone())
        .ok_or_else(|| FormulaError::Eval("z does not fill a relation slot".into()))?;

    let f_coeffs = z_poly_coefficients(&spec.defining[0], &z_slot, &slot_asg, env, &cfg)?;
    let q_coeffs = z_poly_coefficients(q, z, asg, env, &cfg)?;
    let res = resultant(&f_coeffs, &q_coeffs, cfg.truncation)
        .map_err(FormulaError::Series)?;
    Ok(res.is_zero_up_to_known())
}

/// Coefficients of p as a polynomial in the order-0 indeterminate `z`, each
/// evaluated in the series model at the given assignment.
fn z_poly_coefficients(
    p: &DiffPoly,
    z: &Var,
    asg: &BTreeMap<Var, Value>,
    env: &ModelEnv,
    cfg: &ModelConfig,
) -> Result<Vec<TruncSeries>, FormulaError> {
    if p.order_of(z).is_some_and(|k| k > 0) {
        return Err(FormulaError::Eval(format!(
            "derivatives of {z} are not allowed in the algebraic shape"
        )));
    }
    let z0 = DerIndet::new(z.clone(), 0);
    let max_deg = p
        .terms()
        .map(|(m, _)| m.exponent(&z0))
        .max()
        .unwrap_or(0) as usize;
    let mut by_degree: Vec<DiffPoly> = vec![DiffPoly::zero(); max_deg + 1];
    for (m, c) in p.terms() {
        let d = m.exponent(&z0) as usize;
        let rest = m
            .try_div(&crate::diffpoly::Monomial::from_powers([(z0.clone(), d as u32)]))
            .expect("divisible by its own z-part");
        by_degree[d] = &by_degree[d] + &DiffPoly::term(rest, c.clone());
    }
    by_degree
        .iter()
        .map(|coeff| {
            env.eval_poly(coeff, asg).and_then(|v| match v {
                Value::Series(s) => Ok(s),
                Value::Exact(q) => crate::series::interpret_ratfun(&q, cfg).map_err(Into::into),
            })
        })
        .collect()
}

/// Resultant of two univariate polynomials with series coefficients, via the
/// Sylvester determinant (cofactor expansion with column-mask memoization;
/// the matrices here are small).
fn resultant(
    a: &[TruncSeries],
    b: &[TruncSeries],
    truncation: usize,
) -> Result<TruncSeries, SeriesError> {
    let trim = |c: &[TruncSeries]| -> Vec<TruncSeries> {
        let mut v = c.to_vec();
        while v.len() > 1 && v.last().unwrap().is_zero_up_to_known() {
            v.pop();
        }
        v
    };
    let a = trim(a);
    let b = trim(b);
    let m = a.len() - 1;
    let n = b.len() - 1;
    if m == 0 && n == 0 {
        // Two nonzero constants never share a root.
        return Ok(TruncSeries::constant(crate::ratfun::rat(1), truncation));
    }
    let size = m + n;
    let zero = TruncSeries::zero(truncation);
    // Sylvester matrix rows: n shifted copies of a, then m shifted copies of b.
    let mut rows: Vec<Vec<TruncSeries>> = Vec::with_capacity(size);
    for shift in 0..n {
        let mut row = vec![zero.clone(); size];
        for (k, c) in a.iter().enumerate() {
            row[shift + (m - k)] = c.clone();
        }
        rows.push(row);
    }
    for shift in 0..m {
        let mut row = vec![zero.clone(); size];
        for (k, c) in b.iter().enumerate() {
            row[shift + (n - k)] = c.clone();
        }
        rows.push(row);
    }
    det_by_masks(&rows, truncation)
}

fn det_by_masks(rows: &[Vec<TruncSeries>], truncation: usize) -> Result<TruncSeries, SeriesError> {
    let n = rows.len();
    let mut memo: BTreeMap<u32, TruncSeries> = BTreeMap::new();
    det_rec(rows, n, 0, (1u32 << n) - 1, truncation, &mut memo)
}

fn det_rec(
    rows: &[Vec<TruncSeries>],
    n: usize,
    row: usize,
    mask: u32,
    truncation: usize,
    memo: &mut BTreeMap<u32, TruncSeries>,
) -> Result<TruncSeries, SeriesError> {
    if row == n {
        return Ok(TruncSeries::constant(crate::ratfun::rat(1), truncation));
    }
    if let Some(v) = memo.get(&mask) {
        return Ok(v.clone());
    }
    let mut acc = TruncSeries::zero(truncation);
    let mut sign = true;
    for col in 0..n {
        if mask & (1 << col) == 0 {
            continue;
        }
        let entry = &rows[row][col];
        if !entry.is_zero_up_to_known() {
            let sub = det_rec(rows, n, row + 1, mask & !(1 << col), truncation, memo)?;
            let term = entry.mul(&sub)?;
            acc = if sign { acc.add(&term)? } else { acc.sub(&term)? };
        }
        sign = !sign;
    }
    memo.insert(mask, acc.clone());
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_formula, parse_poly};
    use std::collections::BTreeSet;

    fn graph_spec() -> RelationSpec {
        RelationSpec {
            name: "E".into(),
            x: Var::base("x"),
            chain: vec![Var::target(1, "y")],
            defining: vec![parse_poly("y - x'").unwrap()],
            side: None,
        }
    }

    #[test]
    fn graph_relation_is_a_d_formula() {
        let spec = graph_spec();
        let rels: BTreeSet<String> = ["E".to_string()].into();
        let phi = parse_formula("E(x, y)", &rels).unwrap();
        let report = is_d_formula(&phi, &spec, &BTreeMap::new(), &ModelConfig::default(), 25);
        assert_eq!(report.verdict, DFormulaVerdict::Pass);
    }

    #[test]
    fn tautology_is_not_a_d_formula() {
        let spec = graph_spec();
        let rels: BTreeSet<String> = ["E".to_string()].into();
        let phi = parse_formula("0 = 0", &rels).unwrap();
        let report = is_d_formula(&phi, &spec, &BTreeMap::new(), &ModelConfig::default(), 10);
        assert_eq!(report.verdict, DFormulaVerdict::Fail);
        assert!(report.negative_failures > 0);
    }

    #[test]
    fn unwitnessed_existential_is_inconclusive() {
        let spec = graph_spec();
        let rels: BTreeSet<String> = ["E".to_string()].into();
        // Not the algebraic shape (no relation atom), so no resultant path.
        let phi = parse_formula("exists w. (w - y = 0 & w = 0)", &rels).unwrap();
        let report = is_d_formula(&phi, &spec, &BTreeMap::new(), &ModelConfig::default(), 5);
        assert_eq!(report.verdict, DFormulaVerdict::Inconclusive);
    }

    #[test]
    fn resultant_detects_common_roots() {
        let cfg = ModelConfig::default();
        let n = cfg.truncation;
        let one = TruncSeries::constant(crate::ratfun::rat(1), n);
        let a = TruncSeries::constant(crate::ratfun::rat(2), n);
        // p(z) = z^2 - 4, q(z) = z - 2 share the root 2.
        let p = vec![
            TruncSeries::constant(crate::ratfun::rat(-4), n),
            TruncSeries::zero(n),
            one.clone(),
        ];
        let q = vec![a.neg(), one.clone()];
        let r = resultant(&p, &q, n).unwrap();
        assert!(r.is_zero_up_to_known());
        // q(z) = z - 3 does not.
        let q2 = vec![TruncSeries::constant(crate::ratfun::rat(-3), n), one];
        let r2 = resultant(&p, &q2, n).unwrap();
        assert!(!r2.is_zero_up_to_known());
    }
}
