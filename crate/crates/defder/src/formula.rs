//! The reduct-language formula AST: atoms over order-0 polynomial terms,
//! connectives and witnessed existentials, with a deterministic printer and
//! evaluation over either the exact Q(t) model or the series model.
//!
//! Atoms carry [`AlgTerm`]s only, so a formula cannot mention the derivation:
//! the construction pipelines can only ever output legal reduct formulas.

use crate::diffpoly::{DiffPoly, Var};
use crate::ratfun::RatFun;
use crate::series::{eval_diffpoly_series, interpret_ratfun, ModelConfig, SeriesError, TruncSeries};
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("term mentions a derivative indeterminate: {0}")]
    NotAlgebraic(String),
    #[error("relation {0} expects {1} arguments, got {2}")]
    ArityMismatch(String, usize, usize),
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("cannot decide: existential variable {0} has no witness")]
    UnwitnessedQuantifier(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("evaluation error: {0}")]
    Eval(String),
}

/// A polynomial over Q(t) in base variables only: a differential polynomial
/// with all derivative orders 0. The reduct language cannot mention D, and
/// this type enforces that at construction time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgTerm(DiffPoly);

impl AlgTerm {
    pub fn new(p: DiffPoly) -> Result<Self, FormulaError> {
        if p.max_order() > 0 {
            return Err(FormulaError::NotAlgebraic(p.to_string()));
        }
        Ok(AlgTerm(p))
    }

    pub fn var(v: Var) -> Self {
        AlgTerm(DiffPoly::var(v))
    }

    pub fn constant(c: RatFun) -> Self {
        AlgTerm(DiffPoly::constant(c))
    }

    pub fn poly(&self) -> &DiffPoly {
        &self.0
    }

    pub fn into_poly(self) -> DiffPoly {
        self.0
    }

    pub fn add(&self, other: &AlgTerm) -> AlgTerm {
        AlgTerm(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &AlgTerm) -> AlgTerm {
        AlgTerm(&self.0 - &other.0)
    }

    pub fn mul(&self, other: &AlgTerm) -> AlgTerm {
        AlgTerm(&self.0 * &other.0)
    }

    pub fn scalar_mul(&self, c: &RatFun) -> AlgTerm {
        AlgTerm(self.0.scalar_mul(c))
    }

    /// Substitute variables by order-0 polynomials (stays algebraic).
    pub fn subst(&self, images: &BTreeMap<Var, AlgTerm>) -> AlgTerm {
        let map = images
            .iter()
            .map(|(v, t)| (v.clone(), t.0.clone()))
            .collect();
        AlgTerm(self.0.subst_diff(&map))
    }
}

impl fmt::Display for AlgTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Boolean side condition over differential polynomials, riding along a
/// general-sense curve. Not part of the reduct language; only evaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SideCondition {
    Zero(DiffPoly),
    NonZero(DiffPoly),
    All(Vec<SideCondition>),
    Any(Vec<SideCondition>),
}

/// A named relation of the reduct, carved out by differential equations on
/// the slot variables (x, y1..yn).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSpec {
    pub name: String,
    pub x: Var,
    pub chain: Vec<Var>,
    pub defining: Vec<DiffPoly>,
    pub side: Option<SideCondition>,
}

impl RelationSpec {
    pub fn arity(&self) -> usize {
        1 + self.chain.len()
    }

    pub fn slots(&self) -> Vec<Var> {
        let mut v = vec![self.x.clone()];
        v.extend(self.chain.iter().cloned());
        v
    }
}

/// Reduct-language formula.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    /// term = 0
    Eq(AlgTerm),
    /// R(t1, ..., tk)
    Rel { name: String, args: Vec<AlgTerm> },
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Not(Box<Formula>),
    Exists { vars: Vec<Var>, body: Box<Formula> },
}

impl Formula {
    pub fn and(mut parts: Vec<Formula>) -> Formula {
        if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::And(parts)
        }
    }

    pub fn rel(spec: &RelationSpec, args: Vec<AlgTerm>) -> Result<Formula, FormulaError> {
        if args.len() != spec.arity() {
            return Err(FormulaError::ArityMismatch(
                spec.name.clone(),
                spec.arity(),
                args.len(),
            ));
        }
        Ok(Formula::Rel {
            name: spec.name.clone(),
            args,
        })
    }

    pub fn is_quantifier_free(&self) -> bool {
        match self {
            Formula::Eq(_) | Formula::Rel { .. } => true,
            Formula::And(fs) | Formula::Or(fs) => fs.iter().all(Self::is_quantifier_free),
            Formula::Not(f) => f.is_quantifier_free(),
            Formula::Exists { .. } => false,
        }
    }

    /// Existential: built from atoms with And/Or/Exists, no quantifier under
    /// a negation.
    pub fn is_existential(&self) -> bool {
        match self {
            Formula::Eq(_) | Formula::Rel { .. } => true,
            Formula::And(fs) | Formula::Or(fs) => fs.iter().all(Self::is_existential),
            Formula::Not(f) => f.is_quantifier_free(),
            Formula::Exists { body, .. } => body.is_existential(),
        }
    }

    /// Apply a map to every atom term (used by deparametrization).
    pub fn map_terms(&self, f: &impl Fn(&AlgTerm) -> AlgTerm) -> Formula {
        match self {
            Formula::Eq(t) => Formula::Eq(f(t)),
            Formula::Rel { name, args } => Formula::Rel {
                name: name.clone(),
                args: args.iter().map(f).collect(),
            },
            Formula::And(fs) => Formula::And(fs.iter().map(|g| g.map_terms(f)).collect()),
            Formula::Or(fs) => Formula::Or(fs.iter().map(|g| g.map_terms(f)).collect()),
            Formula::Not(g) => Formula::Not(Box::new(g.map_terms(f))),
            Formula::Exists { vars, body } => Formula::Exists {
                vars: vars.clone(),
                body: Box::new(body.map_terms(f)),
            },
        }
    }

    /// All rational-function coefficients appearing in atoms and relation
    /// definitions are collected by callers for pole avoidance; this walks
    /// the atom terms only.
    pub fn atom_coefficients(&self) -> Vec<RatFun> {
        let mut out = Vec::new();
        self.visit_terms(&mut |t: &AlgTerm| {
            out.extend(t.poly().terms().map(|(_, c)| c.clone()));
        });
        out
    }

    fn visit_terms(&self, f: &mut impl FnMut(&AlgTerm)) {
        match self {
            Formula::Eq(t) => f(t),
            Formula::Rel { args, .. } => args.iter().for_each(&mut *f),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|g| g.visit_terms(f)),
            Formula::Not(g) => g.visit_terms(f),
            Formula::Exists { body, .. } => body.visit_terms(f),
        }
    }

    /// Deterministic rendering; round-trips through the parser.
    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let prec = match self {
            Formula::Eq(_) | Formula::Rel { .. } | Formula::Not(_) => 3,
            Formula::And(_) => 2,
            Formula::Or(_) => 1,
            Formula::Exists { .. } => 0,
        };
        let need = prec < parent;
        if need {
            write!(f, "(")?;
        }
        match self {
            Formula::Eq(t) => write!(f, "{t} = 0")?,
            Formula::Rel { name, args } => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")?;
            }
            Formula::And(fs) => {
                for (i, g) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " & ")?;
                    }
                    g.fmt_prec(f, 3)?;
                }
            }
            Formula::Or(fs) => {
                for (i, g) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    g.fmt_prec(f, 2)?;
                }
            }
            Formula::Not(g) => {
                write!(f, "!(")?;
                g.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Formula::Exists { vars, body } => {
                write!(f, "exists ")?;
                for (i, v) in vars.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ". (")?;
                body.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if need {
            write!(f, ")")?;
        }
        Ok(())
    }

    /// JSON encoding with stable field names: kind, args, children.
    pub fn to_json(&self) -> Json {
        match self {
            Formula::Eq(t) => json!({"kind": "eq", "args": [t.to_string()]}),
            Formula::Rel { name, args } => json!({
                "kind": "rel",
                "name": name,
                "args": args.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
            }),
            Formula::And(fs) => json!({
                "kind": "and",
                "children": fs.iter().map(Formula::to_json).collect::<Vec<_>>(),
            }),
            Formula::Or(fs) => json!({
                "kind": "or",
                "children": fs.iter().map(Formula::to_json).collect::<Vec<_>>(),
            }),
            Formula::Not(g) => json!({"kind": "not", "children": [g.to_json()]}),
            Formula::Exists { vars, body } => json!({
                "kind": "exists",
                "args": vars.iter().map(|v| v.name.clone()).collect::<Vec<_>>(),
                "children": [body.to_json()],
            }),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// Which field the formula is evaluated in.
#[derive(Debug, Clone)]
pub enum Backend {
    /// Exact values in Q(t), derivation d/dt.
    Exact,
    /// Truncated power series, derivation d/ds, zero tested up to known order.
    Series(ModelConfig),
}

/// A model element.
#[derive(Debug, Clone)]
pub enum Value {
    Exact(RatFun),
    Series(TruncSeries),
}

/// Relation interpretations plus the evaluation backend.
pub struct ModelEnv<'a> {
    pub relations: BTreeMap<String, &'a RelationSpec>,
    pub backend: Backend,
}

impl<'a> ModelEnv<'a> {
    pub fn exact(spec: &'a RelationSpec) -> Self {
        let mut relations = BTreeMap::new();
        relations.insert(spec.name.clone(), spec);
        ModelEnv {
            relations,
            backend: Backend::Exact,
        }
    }

    pub fn series(spec: &'a RelationSpec, cfg: ModelConfig) -> Self {
        let mut relations = BTreeMap::new();
        relations.insert(spec.name.clone(), spec);
        ModelEnv {
            relations,
            backend: Backend::Series(cfg),
        }
    }

    /// Evaluate a differential polynomial at the assignment.
    pub fn eval_poly(
        &self,
        p: &DiffPoly,
        asg: &BTreeMap<Var, Value>,
    ) -> Result<Value, FormulaError> {
        match &self.backend {
            Backend::Exact => {
                let m: BTreeMap<Var, RatFun> = asg
                    .iter()
                    .map(|(v, val)| match val {
                        Value::Exact(q) => Ok((v.clone(), q.clone())),
                        Value::Series(_) => Err(FormulaError::Eval(
                            "series value in exact model".into(),
                        )),
                    })
                    .collect::<Result<_, _>>()?;
                p.eval_ratfun(&m)
                    .map(Value::Exact)
                    .map_err(|e| FormulaError::Eval(e.to_string()))
            }
            Backend::Series(cfg) => {
                let m: BTreeMap<Var, TruncSeries> = asg
                    .iter()
                    .map(|(v, val)| match val {
                        Value::Series(s) => Ok((v.clone(), s.clone())),
                        Value::Exact(q) => {
                            interpret_ratfun(q, cfg).map(|s| (v.clone(), s)).map_err(Into::into)
                        }
                    })
                    .collect::<Result<_, FormulaError>>()?;
                Ok(Value::Series(eval_diffpoly_series(p, &m, cfg)?))
            }
        }
    }

    pub fn is_zero(&self, v: &Value) -> bool {
        match v {
            Value::Exact(q) => q.is_zero(),
            Value::Series(s) => s.is_zero_up_to_known(),
        }
    }

    fn eval_side(
        &self,
        side: &SideCondition,
        asg: &BTreeMap<Var, Value>,
    ) -> Result<bool, FormulaError> {
        Ok(match side {
            SideCondition::Zero(p) => self.is_zero(&self.eval_poly(p, asg)?),
            SideCondition::NonZero(p) => !self.is_zero(&self.eval_poly(p, asg)?),
            SideCondition::All(cs) => {
                for c in cs {
                    if !self.eval_side(c, asg)? {
                        return Ok(false);
                    }
                }
                true
            }
            SideCondition::Any(cs) => {
                let mut any = false;
                for c in cs {
                    if self.eval_side(c, asg)? {
                        any = true;
                        break;
                    }
                }
                any
            }
        })
    }

    fn eval_rel(
        &self,
        name: &str,
        args: &[AlgTerm],
        asg: &BTreeMap<Var, Value>,
    ) -> Result<bool, FormulaError> {
        let spec = self
            .relations
            .get(name)
            .ok_or_else(|| FormulaError::UnknownRelation(name.to_string()))?;
        if args.len() != spec.arity() {
            return Err(FormulaError::ArityMismatch(
                name.to_string(),
                spec.arity(),
                args.len(),
            ));
        }
        // Evaluate the argument terms, then plug them into the slot variables
        // of the defining equations.
        let mut slot_asg = BTreeMap::new();
        for (slot, arg) in spec.slots().into_iter().zip(args) {
            slot_asg.insert(slot, self.eval_poly(arg.poly(), asg)?);
        }
        for eq in &spec.defining {
            if !self.is_zero(&self.eval_poly(eq, &slot_asg)?) {
                return Ok(false);
            }
        }
        if let Some(side) = &spec.side {
            return self.eval_side(side, &slot_asg);
        }
        Ok(true)
    }
}

/// Standard satisfaction. Existential nodes require witness terms: the
/// certificate's witness map assigns each quantified variable a differential
/// polynomial in the free variables, evaluated in the model to extend the
/// assignment. Blind witness search over an infinite field is not attempted.
pub fn eval_formula(
    env: &ModelEnv,
    formula: &Formula,
    asg: &BTreeMap<Var, Value>,
    witnesses: &BTreeMap<Var, DiffPoly>,
) -> Result<bool, FormulaError> {
    match formula {
        Formula::Eq(t) => Ok(env.is_zero(&env.eval_poly(t.poly(), asg)?)),
        Formula::Rel { name, args } => env.eval_rel(name, args, asg),
        Formula::And(fs) => {
            for f in fs {
                if !eval_formula(env, f, asg, witnesses)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Formula::Or(fs) => {
            for f in fs {
                if eval_formula(env, f, asg, witnesses)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Formula::Not(f) => Ok(!eval_formula(env, f, asg, witnesses)?),
        Formula::Exists { vars, body } => {
            let mut extended = asg.clone();
            for v in vars {
                let term = witnesses
                    .get(v)
                    .ok_or_else(|| FormulaError::UnwitnessedQuantifier(v.name.clone()))?;
                let value = env.eval_poly(term, &extended)?;
                extended.insert(v.clone(), value);
            }
            eval_formula(env, body, &extended, witnesses)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffpoly::DiffPoly;
    use crate::series::random_generic;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn x() -> Var {
        Var::base("x")
    }

    fn y() -> Var {
        Var::target(1, "y")
    }

    fn graph_relation() -> RelationSpec {
        RelationSpec {
            name: "E".into(),
            x: x(),
            chain: vec![y()],
            defining: vec![&DiffPoly::var(y()) - &DiffPoly::der_indet(x(), 1)],
            side: None,
        }
    }

    #[test]
    fn algterm_rejects_derivatives() {
        assert!(AlgTerm::new(DiffPoly::der_indet(x(), 1)).is_err());
        assert!(AlgTerm::new(DiffPoly::var(x())).is_ok());
    }

    #[test]
    fn print_examples() {
        let spec = graph_relation();
        let a1 = Formula::rel(&spec, vec![AlgTerm::var(x()), AlgTerm::var(y())]).unwrap();
        let tx = AlgTerm::var(x()).scalar_mul(&RatFun::t());
        let xty = AlgTerm::var(x()).add(&AlgTerm::var(y()).scalar_mul(&RatFun::t()));
        let a2 = Formula::rel(&spec, vec![tx, xty]).unwrap();
        let conj = Formula::And(vec![a1, a2]);
        assert_eq!(conj.to_string(), "E(x, y) & E(t * x, x + t * y)");

        let u = Var::diff(1, "u");
        assert_eq!(Formula::Eq(AlgTerm::var(u)).to_string(), "u = 0");

        let z = Var::aux("z");
        let body = Formula::Eq(AlgTerm::var(z.clone()));
        let ex = Formula::Exists {
            vars: vec![z],
            body: Box::new(body),
        };
        assert_eq!(ex.to_string(), "exists z. (z = 0)");
    }

    #[test]
    fn eval_graph_atom_series() {
        let spec = graph_relation();
        let cfg = ModelConfig::default();
        let env = ModelEnv::series(&spec, cfg.clone());
        let phi = Formula::rel(&spec, vec![AlgTerm::var(x()), AlgTerm::var(y())]).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let a = random_generic(&cfg, &mut rng);
        let mut asg = BTreeMap::new();
        asg.insert(x(), Value::Series(a.clone()));
        asg.insert(y(), Value::Series(a.derive()));
        assert!(eval_formula(&env, &phi, &asg, &BTreeMap::new()).unwrap());

        let b = random_generic(&cfg, &mut rng);
        asg.insert(y(), Value::Series(b));
        assert!(!eval_formula(&env, &phi, &asg, &BTreeMap::new()).unwrap());
    }

    #[test]
    fn eval_eq_atom_on_random_series_is_false() {
        let spec = graph_relation();
        let cfg = ModelConfig::default();
        let env = ModelEnv::series(&spec, cfg.clone());
        let u = Var::diff(1, "u");
        let phi = Formula::Eq(AlgTerm::var(u.clone()));
        let mut rng = StdRng::seed_from_u64(4);
        let mut asg = BTreeMap::new();
        asg.insert(u, Value::Series(random_generic(&cfg, &mut rng)));
        assert!(!eval_formula(&env, &phi, &asg, &BTreeMap::new()).unwrap());
    }

    #[test]
    fn boolean_structure_matches_children() {
        let spec = graph_relation();
        let env = ModelEnv::exact(&spec);
        let truthy = Formula::Eq(AlgTerm::constant(RatFun::zero()));
        let falsy = Formula::Eq(AlgTerm::constant(RatFun::from_int(1)));
        let asg = BTreeMap::new();
        let w = BTreeMap::new();
        let ev = |f: &Formula| eval_formula(&env, f, &asg, &w).unwrap();
        assert!(ev(&Formula::And(vec![truthy.clone(), truthy.clone()])));
        assert!(!ev(&Formula::And(vec![truthy.clone(), falsy.clone()])));
        assert!(ev(&Formula::Or(vec![falsy.clone(), truthy.clone()])));
        assert!(!ev(&Formula::Or(vec![falsy.clone(), falsy.clone()])));
        assert!(ev(&Formula::Not(Box::new(falsy.clone()))));
        assert!(!ev(&Formula::Not(Box::new(truthy.clone()))));
    }

    #[test]
    fn unwitnessed_quantifier_is_an_error() {
        let spec = graph_relation();
        let env = ModelEnv::exact(&spec);
        let z = Var::aux("z");
        let phi = Formula::Exists {
            vars: vec![z],
            body: Box::new(Formula::Eq(AlgTerm::constant(RatFun::zero()))),
        };
        let err = eval_formula(&env, &phi, &BTreeMap::new(), &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, FormulaError::UnwitnessedQuantifier(_)));
    }

    #[test]
    fn substitution_soundness_on_graph_points() {
        // Rel(E, a*x + b, a'*x + a*y + b') at a graph point agrees with
        // Rel(E, x, y) at the substituted graph point.
        let spec = graph_relation();
        let cfg = ModelConfig::default();
        let env = ModelEnv::series(&spec, cfg.clone());
        let alpha = RatFun::t();
        let beta = RatFun::from_int(2);
        let x_arg = AlgTerm::var(x())
            .scalar_mul(&alpha)
            .add(&AlgTerm::constant(beta.clone()));
        let y_arg = AlgTerm::var(x())
            .scalar_mul(&alpha.derivative())
            .add(&AlgTerm::var(y()).scalar_mul(&alpha))
            .add(&AlgTerm::constant(beta.derivative()));
        let subst_atom = Formula::rel(&spec, vec![x_arg, y_arg]).unwrap();
        let plain_atom = Formula::rel(&spec, vec![AlgTerm::var(x()), AlgTerm::var(y())]).unwrap();

        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..10 {
            let a = random_generic(&cfg, &mut rng);
            let da = a.derive();
            let mut graph = BTreeMap::new();
            graph.insert(x(), Value::Series(a.clone()));
            graph.insert(y(), Value::Series(da.clone()));
            let lhs = eval_formula(&env, &subst_atom, &graph, &BTreeMap::new()).unwrap();

            // Substituted graph point (alpha a + beta, D(alpha a + beta)).
            let alpha_s = interpret_ratfun(&alpha, &cfg).unwrap();
            let beta_s = interpret_ratfun(&beta, &cfg).unwrap();
            let moved = alpha_s.mul(&a).unwrap().add(&beta_s).unwrap();
            let mut image = BTreeMap::new();
            image.insert(x(), Value::Series(moved.clone()));
            image.insert(y(), Value::Series(moved.derive()));
            let rhs = eval_formula(&env, &plain_atom, &image, &BTreeMap::new()).unwrap();
            assert_eq!(lhs, rhs);
            assert!(lhs);
        }
    }

    #[test]
    fn json_shape_is_stable() {
        let spec = graph_relation();
        let atom = Formula::rel(&spec, vec![AlgTerm::var(x()), AlgTerm::var(y())]).unwrap();
        let f = Formula::And(vec![atom, Formula::Eq(AlgTerm::constant(RatFun::zero()))]);
        let j = f.to_json();
        assert_eq!(j["kind"], "and");
        assert_eq!(j["children"][0]["kind"], "rel");
        assert_eq!(j["children"][0]["args"][0], "x");
    }
}
