//! Existential definitions from explicit equations y = f(x) of order >= 1.
//!
//! The reduction chain g_0 = f, g_(i+1) = g_i(tX) - t^s_i * g_i(X) (s_i the
//! coordinate sum of the leading exponent tuple) strictly decreases the
//! reverse-lexicographic (n+1)-degree and stops at the isolated-derivative
//! shape c * X^beta * DX + Q(X). Each g_i is existentially definable from the
//! relation: g_m(x) expands as a Q(t)-linear combination of the atom values
//! f(t^j x), so the output formula is an existential conjunction of relation
//! atoms at scaled arguments plus one linear equation. For beta > 0 the
//! definition is patched by conjoining the graph-compatible shift
//! (x, y) -> (x + t, y + 1), whose leading coordinate never vanishes together
//! with the original one.

use super::{
    DefinabilityError, Definition, DefinitionTask, DerivationTrace, Terminal, TraceCoords,
    TraceStep,
};
use crate::diffpoly::{DerIndet, DiffPoly, Var};
use crate::formula::{AlgTerm, Formula, RelationSpec};
use crate::ratfun::{rat, Poly, RatFun};
use std::collections::BTreeMap;

/// Extract f from a defining equation of the shape y = f(x): the polynomial
/// must be a*Y + B(X) with a in Q(t) nonzero.
fn explicit_rhs(spec: &RelationSpec) -> Result<DiffPoly, DefinabilityError> {
    let eq = spec
        .defining
        .first()
        .ok_or(DefinabilityError::NoDefiningEquation)?;
    if spec.chain.len() != 1 {
        return Err(DefinabilityError::NotExplicitShape(
            "explicit mode needs a single target variable".into(),
        ));
    }
    let y = &spec.chain[0];
    let y_indet = DerIndet::new(y.clone(), 0);
    let mut a = RatFun::zero();
    let mut rest = DiffPoly::zero();
    for (m, c) in eq.terms() {
        let y_deg: u32 = m
            .powers()
            .filter(|(d, _)| &d.var == y)
            .map(|(d, e)| if d.order == 0 { e } else { u32::MAX })
            .sum();
        match y_deg {
            0 => rest = &rest + &DiffPoly::term(m.clone(), c.clone()),
            1 if m.exponent(&y_indet) == 1 && m.total_degree() == 1 => {
                a = &a + c;
            }
            _ => {
                return Err(DefinabilityError::NotExplicitShape(format!(
                    "term {m} is not linear in {y}"
                )))
            }
        }
    }
    if a.is_zero() {
        return Err(DefinabilityError::NotExplicitShape(format!(
            "{y} does not occur linearly"
        )));
    }
    // a*Y + rest = 0  =>  f = -rest/a.
    let f = rest.scalar_mul(&(-&a).inverse().expect("nonzero"));
    if f.order_of(&spec.x).unwrap_or(0) < 1 {
        return Err(DefinabilityError::OrderZero);
    }
    for v in f.vars() {
        if v != spec.x {
            return Err(DefinabilityError::NotExplicitShape(format!(
                "right-hand side mentions {v}"
            )));
        }
    }
    Ok(f)
}

/// Some((lead, beta, q)) when g = lead * X^beta * DX + Q(X) with Q of order 0.
fn isolated_dx_shape(g: &DiffPoly, x: &Var) -> Option<(RatFun, u32, DiffPoly)> {
    let dx = DerIndet::new(x.clone(), 0);
    let dx1 = DerIndet::new(x.clone(), 1);
    let mut found: Option<(RatFun, u32)> = None;
    let mut q = DiffPoly::zero();
    for (m, c) in g.terms() {
        let has_derivative = m.powers().any(|(d, _)| d.order >= 1);
        if !has_derivative {
            q = &q + &DiffPoly::term(m.clone(), c.clone());
            continue;
        }
        // The single derivative monomial must be X^beta * DX.
        if m.exponent(&dx1) != 1 {
            return None;
        }
        let beta = m.exponent(&dx);
        if m.total_degree() != beta + 1 || found.is_some() {
            return None;
        }
        found = Some((c.clone(), beta));
    }
    let (lead, beta) = found?;
    Some((lead, beta, q))
}

struct Chain {
    /// g_0 .. g_m.
    polys: Vec<DiffPoly>,
    /// Exponent sums s_0 .. s_(m-1) used by the steps.
    sums: Vec<u32>,
    trace: DerivationTrace,
}

fn run_reduction(f: &DiffPoly, x: &Var) -> Result<Chain, DefinabilityError> {
    let mut polys = vec![f.clone()];
    let mut sums = Vec::new();
    let mut steps = Vec::new();
    let mut item_count = 1usize; // item 0 is the base
    let mut g_idx = 0usize;
    let mut degree = f.n1_degree(x)?;
    loop {
        let g = polys.last().unwrap().clone();
        if isolated_dx_shape(&g, x).is_some() {
            break;
        }
        if g.max_order() == 0 {
            return Err(DefinabilityError::ReductionDegenerate);
        }
        let s: u32 = degree.0.iter().sum();
        let sigma = g.subst_affine(x, &RatFun::t(), &RatFun::zero())?;
        steps.push(TraceStep::Substitute {
            alpha: RatFun::t(),
            beta: RatFun::zero(),
            source: g_idx,
            result: sigma.clone(),
        });
        let sigma_idx = item_count;
        item_count += 1;
        let t_pow = RatFun::from_poly(Poly::monomial(rat(1), s as usize));
        let next = &sigma - &g.scalar_mul(&t_pow);
        if next.is_zero() {
            return Err(DefinabilityError::ReductionDegenerate);
        }
        steps.push(TraceStep::Combine {
            coeffs: vec![DiffPoly::one(), DiffPoly::constant(-&t_pow)],
            items: vec![sigma_idx, g_idx],
            result: next.clone(),
        });
        g_idx = item_count;
        item_count += 1;
        let next_degree = next.n1_degree(x)?;
        if next_degree >= degree {
            return Err(DefinabilityError::Invariant(
                "reverse-lex degree did not strictly decrease".into(),
            ));
        }
        if next.total_degree() > g.total_degree() {
            return Err(DefinabilityError::Invariant(
                "total degree increased along the reduction".into(),
            ));
        }
        degree = next_degree;
        polys.push(next);
        sums.push(s);
    }
    Ok(Chain {
        polys,
        sums,
        trace: DerivationTrace {
            coords: TraceCoords::Explicit,
            base: f.clone(),
            steps,
        },
    })
}

/// Coefficients lambda_j with g_m(x) = sum_j lambda_j * f(t^j x), from the
/// recurrence g_(i+1)(t^j x) = g_i(t^(j+1) x) - t^s_i * g_i(t^j x).
fn expansion_coefficients(sums: &[u32]) -> Vec<RatFun> {
    let m = sums.len();
    let mut coeffs = vec![RatFun::one()];
    for i in (0..m).rev() {
        let t_pow = RatFun::from_poly(Poly::monomial(rat(1), sums[i] as usize));
        let mut next = vec![RatFun::zero(); coeffs.len() + 1];
        for (j, c) in coeffs.iter().enumerate() {
            next[j + 1] = &next[j + 1] + c;
            next[j] = &next[j] - &(c * &t_pow);
        }
        coeffs = next;
    }
    coeffs
}

/// One existential block Psi(x_expr, y_expr): relation atoms E(t^j * x_expr, w_j)
/// for j = 0..m plus the linear resolution
/// lead * x_expr^beta * y_expr + Q(x_expr) - sum_j lambda_j w_j = 0.
struct PsiBlock {
    atoms: Vec<Formula>,
    resolution: Formula,
    witness_vars: Vec<Var>,
}

#[allow(clippy::too_many_arguments)]
fn psi_block(
    spec: &RelationSpec,
    lambda: &[RatFun],
    lead: &RatFun,
    beta: u32,
    q: &DiffPoly,
    x_expr: &AlgTerm,
    y_expr: &AlgTerm,
    tag: &str,
) -> Result<PsiBlock, DefinabilityError> {
    let mut atoms = Vec::new();
    let mut witness_vars = Vec::new();
    let mut linear = AlgTerm::constant(RatFun::zero());
    for (j, lam) in lambda.iter().enumerate() {
        let w = Var::aux(format!("w{tag}{j}"));
        let t_pow = RatFun::from_poly(Poly::monomial(rat(1), j));
        let arg = x_expr.scalar_mul(&t_pow);
        atoms.push(Formula::rel(spec, vec![arg, AlgTerm::var(w.clone())])?);
        linear = linear.sub(&AlgTerm::var(w.clone()).scalar_mul(lam));
        witness_vars.push(w);
    }
    // lead * x^beta * y + Q(x) - sum lambda_j w_j.
    let mut x_pow = AlgTerm::constant(RatFun::one());
    for _ in 0..beta {
        x_pow = x_pow.mul(x_expr);
    }
    let mut images = BTreeMap::new();
    images.insert(spec.x.clone(), x_expr.clone());
    let q_sub = AlgTerm::new(q.clone())?.subst(&images);
    let resolution = Formula::Eq(
        x_pow
            .mul(y_expr)
            .scalar_mul(lead)
            .add(&q_sub)
            .add(&linear),
    );
    Ok(PsiBlock {
        atoms,
        resolution,
        witness_vars,
    })
}

/// Existential definition of y = Dx from an explicit equation y = f(x).
pub fn define_from_explicit(task: DefinitionTask) -> Result<Definition, DefinabilityError> {
    let spec = &task.relation;
    let f = explicit_rhs(spec)?;
    let x = spec.x.clone();
    let y = spec.chain[0].clone();
    let mut chain = run_reduction(&f, &x)?;
    let g_m = chain.polys.last().unwrap();
    let (lead, beta, q) = isolated_dx_shape(g_m, &x)
        .ok_or_else(|| DefinabilityError::Invariant("loop exited off-shape".into()))?;
    let lambda = expansion_coefficients(&chain.sums);
    // Internal check: the expansion really reproduces g_m.
    let mut recombined = DiffPoly::zero();
    for (j, lam) in lambda.iter().enumerate() {
        let t_pow = RatFun::from_poly(Poly::monomial(rat(1), j));
        let fj = f.subst_affine(&x, &t_pow, &RatFun::zero())?;
        recombined = &recombined + &fj.scalar_mul(lam);
    }
    if &recombined != g_m {
        return Err(DefinabilityError::Invariant(
            "atom expansion does not reproduce the reduced polynomial".into(),
        ));
    }

    let x_term = AlgTerm::var(x.clone());
    let y_term = AlgTerm::var(y.clone());
    let simple = beta == 0 && chain.sums.is_empty() && lead.is_one() && q.is_zero();
    let formula = if simple {
        // y = f(x) with f already DX: the relation is the graph.
        Formula::rel(spec, vec![x_term, y_term])?
    } else {
        let main = psi_block(spec, &lambda, &lead, beta, &q, &x_term, &y_term, "")?;
        let mut vars = main.witness_vars.clone();
        let mut parts = main.atoms;
        parts.push(main.resolution);
        for (j, w) in main.witness_vars.iter().enumerate() {
            let t_pow = RatFun::from_poly(Poly::monomial(rat(1), j));
            chain.trace.steps.push(TraceStep::Witness {
                var: w.clone(),
                term: f.subst_affine(&x, &t_pow, &RatFun::zero())?,
            });
        }
        if beta > 0 {
            // Conjoin the shifted block Psi(x + t, y + 1): at every point at
            // least one of the two leading coordinates is nonzero and pins y,
            // the other holds vacuously at its degenerate point.
            let xs = x_term.add(&AlgTerm::constant(RatFun::t()));
            let ys = y_term.add(&AlgTerm::constant(RatFun::one()));
            let shifted = psi_block(spec, &lambda, &lead, beta, &q, &xs, &ys, "s")?;
            for (j, w) in shifted.witness_vars.iter().enumerate() {
                let t_pow = RatFun::from_poly(Poly::monomial(rat(1), j));
                let t_pow_next = RatFun::from_poly(Poly::monomial(rat(1), j + 1));
                chain.trace.steps.push(TraceStep::Witness {
                    var: w.clone(),
                    term: f.subst_affine(&x, &t_pow, &t_pow_next)?,
                });
            }
            vars.extend(shifted.witness_vars);
            parts.extend(shifted.atoms);
            parts.push(shifted.resolution);
        }
        Formula::Exists {
            vars,
            body: Box::new(Formula::and(parts)),
        }
    };
    Ok(Definition {
        task,
        formula,
        trace: chain.trace,
        terminal: Terminal::SingleDx { lead, beta },
        chain_formulas: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::definability::Mode;
    use crate::parse::parse_equation;

    fn task(eq: &str) -> DefinitionTask {
        DefinitionTask {
            relation: RelationSpec {
                name: "E".into(),
                x: Var::base("x"),
                chain: vec![Var::target(1, "y")],
                defining: vec![parse_equation(eq).unwrap()],
                side: None,
            },
            mode: Mode::Explicit,
        }
    }

    #[test]
    fn graph_equation_is_the_relation_itself() {
        let def = define_from_explicit(task("y = x'")).unwrap();
        assert!(def.trace.steps.is_empty());
        assert_eq!(def.formula.to_string(), "E(x, y)");
        assert!(matches!(def.terminal, Terminal::SingleDx { beta: 0, .. }));
    }

    #[test]
    fn squared_derivative_first_step_matches_hand_expansion() {
        // f = (DX)^2, leading tuple (0,2): g_1 = f(tX) - t^2 f(X) =
        // 2t X DX + X^2, leading tuple (1,1).
        let def = define_from_explicit(task("y = x'*x'")).unwrap();
        let combos = def.trace.combine_results();
        let expected = parse_equation("2*t*x*x' + x^2").unwrap();
        assert_eq!(combos[0], &expected);
        match &def.terminal {
            Terminal::SingleDx { beta, .. } => assert_eq!(*beta, 1),
            other => panic!("unexpected terminal {other:?}"),
        }
        // beta > 0 patches with the shifted block; still existential.
        assert!(def.formula.is_existential());
        assert!(!def.formula.is_quantifier_free());
    }

    #[test]
    fn order_zero_rejected() {
        assert!(matches!(
            define_from_explicit(task("y = x*x + t")),
            Err(DefinabilityError::OrderZero)
        ));
    }

    #[test]
    fn non_explicit_shape_rejected() {
        assert!(matches!(
            define_from_explicit(task("y*y = x'")),
            Err(DefinabilityError::NotExplicitShape(_))
        ));
    }

    #[test]
    fn second_order_equation_reduces() {
        let def = define_from_explicit(task("y = x'' + x*x'")).unwrap();
        match &def.terminal {
            Terminal::SingleDx { lead, .. } => assert!(!lead.is_zero()),
            other => panic!("unexpected terminal {other:?}"),
        }
        assert!(def.formula.is_existential());
    }
}
