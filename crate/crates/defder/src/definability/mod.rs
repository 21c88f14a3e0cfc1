//! The construction pipelines: explicit-equation reduction, graph-containing
//! curve elimination, the multi-derivative generalization, the algebraic
//! front-end, the nonzero-witness finder and parameter elimination.
//!
//! Every pipeline emits a [`Formula`] in the reduct language together with a
//! replayable [`DerivationTrace`]: the ordered substitutions and
//! Q(t){X}-linear combinations whose exact replay proves the formula defines
//! y = Dx. Tie-breaking is deterministic throughout so traces are
//! reproducible bit for bit.

mod algebraic;
mod curve;
mod dformula;
mod explicit;
mod witness;

pub use algebraic::{algebraic_front, AlgebraicFront};
pub use dformula::{is_d_formula, is_d_formula_over, DFormulaReport, DFormulaVerdict};
pub(crate) use dformula::one_sample as dformula_sample;
pub use witness::{deparametrize, nonzero_witness, GuardedFormula};

use crate::diffpoly::{DiffPoly, DiffPolyError, Var};
use crate::formula::{Formula, FormulaError, RelationSpec, SideCondition};
use crate::parse::{parse_equation, parse_poly, parse_ratfun, ParseError};
use crate::ratfun::RatFun;
use serde_json::{json, Value as Json};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DefinabilityError {
    #[error("the defining equation is not of the explicit shape y = f(x): {0}")]
    NotExplicitShape(String),
    #[error("the explicit right-hand side has order 0; order at least one is required")]
    OrderZero,
    #[error("the relation does not contain the graph of the derivation")]
    GraphNotContained,
    #[error("zero polynomial")]
    ZeroPolynomial,
    #[error("reduction degenerate: reached an order-0 polynomial without isolating the derivative")]
    ReductionDegenerate,
    #[error("strategy exhausted: no substitution made progress")]
    StrategyExhausted,
    #[error("hypothesis violated: {0}")]
    NotAlgebraicShape(String),
    #[error("equation separates as g(X)*h(Y); a non-trivial equation is required")]
    SeparableEquation,
    #[error("the supplied factor does not divide the defining equation")]
    FactorDoesNotDivide,
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("relation has no defining equation")]
    NoDefiningEquation,
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    DiffPoly(#[from] DiffPolyError),
}

/// Which constructive pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Explicit,
    Curve,
    GeneralCurve,
    Multi,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Explicit => "explicit",
            Mode::Curve => "curve",
            Mode::GeneralCurve => "general-curve",
            Mode::Multi => "multi",
        }
    }

    pub fn from_str(s: &str) -> Option<Mode> {
        match s {
            "explicit" => Some(Mode::Explicit),
            "curve" => Some(Mode::Curve),
            "general-curve" => Some(Mode::GeneralCurve),
            "multi" => Some(Mode::Multi),
            _ => None,
        }
    }
}

/// A definability job: the relation and the pipeline to run on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinitionTask {
    pub relation: RelationSpec,
    pub mode: Mode,
}

/// One certificate step. `Substitute` applies a graph-compatible substitution
/// to an already-derived item (sourcing a new reduct atom); `Combine` takes a
/// Q(t){X}-linear combination of derived items; `Witness` records an
/// existential witness for the output formula. Substitute and Combine steps
/// store their resulting polynomial and append it to the item list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceStep {
    Substitute {
        alpha: RatFun,
        beta: RatFun,
        source: usize,
        result: DiffPoly,
    },
    Combine {
        coeffs: Vec<DiffPoly>,
        items: Vec<usize>,
        result: DiffPoly,
    },
    Witness {
        var: Var,
        term: DiffPoly,
    },
}

/// Coordinate system of the trace items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceCoords {
    /// Difference coordinates (x, u1..un): every item must collapse to 0
    /// under u -> 0 (graph preservation).
    U { chain: usize },
    /// Prop-5.1 chains in x alone: the reverse-lex (n+1)-degree strictly
    /// decreases along Combine results instead.
    Explicit,
}

/// Replayable certificate: a base polynomial plus steps. Item k is the base
/// for k = 0 and the result of the k-th item-producing step after that.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivationTrace {
    pub coords: TraceCoords,
    pub base: DiffPoly,
    pub steps: Vec<TraceStep>,
}

impl DerivationTrace {
    /// The derived polynomials in order: base first, then each Substitute or
    /// Combine result.
    pub fn items(&self) -> Vec<&DiffPoly> {
        let mut out = vec![&self.base];
        for s in &self.steps {
            match s {
                TraceStep::Substitute { result, .. } | TraceStep::Combine { result, .. } => {
                    out.push(result)
                }
                TraceStep::Witness { .. } => {}
            }
        }
        out
    }

    pub fn final_item(&self) -> &DiffPoly {
        *self.items().last().unwrap()
    }

    /// Witness map harvested from the Witness steps.
    pub fn witnesses(&self) -> BTreeMap<Var, DiffPoly> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                TraceStep::Witness { var, term } => Some((var.clone(), term.clone())),
                _ => None,
            })
            .collect()
    }

    /// Number of Combine steps (the derivation rounds).
    pub fn combine_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, TraceStep::Combine { .. }))
            .count()
    }

    /// Results of the Combine steps in order: the derived identities.
    pub fn combine_results(&self) -> Vec<&DiffPoly> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                TraceStep::Combine { result, .. } => Some(result),
                _ => None,
            })
            .collect()
    }
}

/// Terminal classification of a completed derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminal {
    /// c * u1^power with c in Q(t) nonzero; power 1 is the plain c*U
    /// certificate, higher powers still carve out u = 0 in a field.
    ScaledU { c: RatFun, power: u32 },
    /// lead * X^beta * DX + Q(X): the isolated-derivative shape of the
    /// explicit pipeline.
    SingleDx { lead: RatFun, beta: u32 },
}

/// A produced definition: formula, certificate, and bookkeeping.
#[derive(Debug, Clone)]
pub struct Definition {
    pub task: DefinitionTask,
    pub formula: Formula,
    pub trace: DerivationTrace,
    pub terminal: Terminal,
    /// Multi mode only: existential definitions of y_i = D^i x for i >= 2,
    /// chained through the main formula.
    pub chain_formulas: Vec<Formula>,
}

impl Definition {
    pub fn witnesses(&self) -> BTreeMap<Var, DiffPoly> {
        self.trace.witnesses()
    }
}

/// True iff every defining equation vanishes identically under Y_i -> D^i X.
pub fn contains_graph(spec: &RelationSpec) -> bool {
    !spec.defining.is_empty()
        && spec
            .defining
            .iter()
            .all(|f| f.collapse_to_graph(&spec.x, &spec.chain).is_zero())
}

/// Deterministic difference-coordinate names: `u` for a single pair,
/// `u1..un` for chains.
pub fn default_u_chain(n: usize) -> Vec<Var> {
    if n == 1 {
        vec![Var::diff(1, "u")]
    } else {
        (1..=n as u32).map(|i| Var::diff(i, format!("u{i}"))).collect()
    }
}

pub use curve::{define_from_curve, define_from_general_curve, define_from_multi};
pub use explicit::define_from_explicit;

/// Dispatch on the task mode.
pub fn define(task: DefinitionTask) -> Result<Definition, DefinabilityError> {
    match task.mode {
        Mode::Explicit => define_from_explicit(task),
        Mode::Curve => define_from_curve(task),
        Mode::GeneralCurve => define_from_general_curve(task),
        Mode::Multi => define_from_multi(task),
    }
}

// --- certificate serialization ------------------------------------------------

fn side_to_json(side: &SideCondition) -> Json {
    match side {
        SideCondition::Zero(p) => json!({"kind": "zero", "poly": p.to_string()}),
        SideCondition::NonZero(p) => json!({"kind": "nonzero", "poly": p.to_string()}),
        SideCondition::All(cs) => {
            json!({"kind": "all", "children": cs.iter().map(side_to_json).collect::<Vec<_>>()})
        }
        SideCondition::Any(cs) => {
            json!({"kind": "any", "children": cs.iter().map(side_to_json).collect::<Vec<_>>()})
        }
    }
}

fn side_from_json(j: &Json) -> Result<SideCondition, CertificateError> {
    let kind = j["kind"].as_str().ok_or(CertificateError::Malformed("side.kind"))?;
    Ok(match kind {
        "zero" => SideCondition::Zero(parse_poly(
            j["poly"].as_str().ok_or(CertificateError::Malformed("side.poly"))?,
        )?),
        "nonzero" => SideCondition::NonZero(parse_poly(
            j["poly"].as_str().ok_or(CertificateError::Malformed("side.poly"))?,
        )?),
        "all" | "any" => {
            let children = j["children"]
                .as_array()
                .ok_or(CertificateError::Malformed("side.children"))?
                .iter()
                .map(side_from_json)
                .collect::<Result<Vec<_>, _>>()?;
            if kind == "all" {
                SideCondition::All(children)
            } else {
                SideCondition::Any(children)
            }
        }
        _ => return Err(CertificateError::Malformed("side.kind")),
    })
}

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("malformed certificate: missing or invalid field {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("certificate JSON: {0}")]
    Json(String),
}

impl Definition {
    /// Serialize the full certificate bundle: task, trace (with the induced
    /// substitution rules documented per step), formula and witnesses. The
    /// polynomial payloads are canonical text; identical inputs give
    /// byte-identical output.
    pub fn to_json(&self) -> Json {
        let spec = &self.task.relation;
        let coords = match self.trace.coords {
            TraceCoords::U { chain } => json!({"kind": "u", "chain": chain}),
            TraceCoords::Explicit => json!({"kind": "explicit"}),
        };
        let us = default_u_chain(spec.chain.len());
        let steps: Vec<Json> = self
            .trace
            .steps
            .iter()
            .map(|s| match s {
                TraceStep::Substitute { alpha, beta, source, result } => {
                    let rule = match self.trace.coords {
                        TraceCoords::U { .. } => {
                            crate::diffpoly::u_subst_map(&spec.x, &us, alpha, beta)
                                .map(|m| {
                                    m.iter()
                                        .map(|(v, img)| format!("{v} -> {img}"))
                                        .collect::<Vec<_>>()
                                })
                                .unwrap_or_default()
                        }
                        TraceCoords::Explicit => {
                            vec![format!("{} -> {}", spec.x, {
                                let a = DiffPoly::var(spec.x.clone()).scalar_mul(alpha);
                                &a + &DiffPoly::constant(beta.clone())
                            })]
                        }
                    };
                    json!({
                        "kind": "substitute",
                        "alpha": alpha.to_string(),
                        "beta": beta.to_string(),
                        "source": source,
                        "rule": rule,
                        "result": result.to_string(),
                    })
                }
                TraceStep::Combine { coeffs, items, result } => json!({
                    "kind": "combine",
                    "coeffs": coeffs.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
                    "items": items,
                    "result": result.to_string(),
                }),
                TraceStep::Witness { var, term } => json!({
                    "kind": "witness",
                    "var": var.name,
                    "term": term.to_string(),
                }),
            })
            .collect();
        let terminal = match &self.terminal {
            Terminal::ScaledU { c, power } => {
                json!({"kind": "scaled-u", "c": c.to_string(), "power": power})
            }
            Terminal::SingleDx { lead, beta } => {
                json!({"kind": "single-dx", "lead": lead.to_string(), "beta": beta})
            }
        };
        json!({
            "schema": "defder.v1",
            "kind": "certificate",
            "task": {
                "mode": self.task.mode.as_str(),
                "x": spec.x.name,
                "chain": spec.chain.iter().map(|v| v.name.clone()).collect::<Vec<_>>(),
                "relation": spec.defining.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
                "side": spec.side.as_ref().map(side_to_json).unwrap_or(Json::Null),
            },
            "coords": coords,
            "base": self.trace.base.to_string(),
            "steps": steps,
            "terminal": terminal,
            "formula": self.formula.to_json(),
            "formula_text": self.formula.to_string(),
            "chain_formulas": self.chain_formulas.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
        })
    }

    /// Reload a certificate bundle produced by [`Definition::to_json`].
    pub fn from_json(j: &Json) -> Result<Definition, CertificateError> {
        let task = &j["task"];
        let mode = Mode::from_str(
            task["mode"].as_str().ok_or(CertificateError::Malformed("task.mode"))?,
        )
        .ok_or(CertificateError::Malformed("task.mode"))?;
        let x = Var::from_name(
            task["x"].as_str().ok_or(CertificateError::Malformed("task.x"))?,
        );
        let chain: Vec<Var> = task["chain"]
            .as_array()
            .ok_or(CertificateError::Malformed("task.chain"))?
            .iter()
            .map(|v| {
                v.as_str()
                    .map(Var::from_name)
                    .ok_or(CertificateError::Malformed("task.chain"))
            })
            .collect::<Result<_, _>>()?;
        let defining: Vec<DiffPoly> = task["relation"]
            .as_array()
            .ok_or(CertificateError::Malformed("task.relation"))?
            .iter()
            .map(|v| {
                v.as_str()
                    .ok_or(CertificateError::Malformed("task.relation"))
                    .and_then(|s| parse_equation(s).map_err(Into::into))
            })
            .collect::<Result<_, _>>()?;
        let side = match &task["side"] {
            Json::Null => None,
            other => Some(side_from_json(other)?),
        };
        let spec = RelationSpec {
            name: "E".into(),
            x,
            chain,
            defining,
            side,
        };
        let coords = match j["coords"]["kind"].as_str() {
            Some("u") => TraceCoords::U {
                chain: j["coords"]["chain"]
                    .as_u64()
                    .ok_or(CertificateError::Malformed("coords.chain"))?
                    as usize,
            },
            Some("explicit") => TraceCoords::Explicit,
            _ => return Err(CertificateError::Malformed("coords.kind")),
        };
        let base = parse_poly(
            j["base"].as_str().ok_or(CertificateError::Malformed("base"))?,
        )?;
        let mut steps = Vec::new();
        for s in j["steps"].as_array().ok_or(CertificateError::Malformed("steps"))? {
            let kind = s["kind"].as_str().ok_or(CertificateError::Malformed("step.kind"))?;
            let step = match kind {
                "substitute" => TraceStep::Substitute {
                    alpha: parse_ratfun(
                        s["alpha"].as_str().ok_or(CertificateError::Malformed("step.alpha"))?,
                    )?,
                    beta: parse_ratfun(
                        s["beta"].as_str().ok_or(CertificateError::Malformed("step.beta"))?,
                    )?,
                    source: s["source"]
                        .as_u64()
                        .ok_or(CertificateError::Malformed("step.source"))?
                        as usize,
                    result: parse_poly(
                        s["result"].as_str().ok_or(CertificateError::Malformed("step.result"))?,
                    )?,
                },
                "combine" => TraceStep::Combine {
                    coeffs: s["coeffs"]
                        .as_array()
                        .ok_or(CertificateError::Malformed("step.coeffs"))?
                        .iter()
                        .map(|c| {
                            c.as_str()
                                .ok_or(CertificateError::Malformed("step.coeffs"))
                                .and_then(|t| parse_poly(t).map_err(Into::into))
                        })
                        .collect::<Result<_, _>>()?,
                    items: s["items"]
                        .as_array()
                        .ok_or(CertificateError::Malformed("step.items"))?
                        .iter()
                        .map(|i| {
                            i.as_u64()
                                .map(|k| k as usize)
                                .ok_or(CertificateError::Malformed("step.items"))
                        })
                        .collect::<Result<_, _>>()?,
                    result: parse_poly(
                        s["result"].as_str().ok_or(CertificateError::Malformed("step.result"))?,
                    )?,
                },
                "witness" => TraceStep::Witness {
                    var: Var::from_name(
                        s["var"].as_str().ok_or(CertificateError::Malformed("step.var"))?,
                    ),
                    term: parse_poly(
                        s["term"].as_str().ok_or(CertificateError::Malformed("step.term"))?,
                    )?,
                },
                _ => return Err(CertificateError::Malformed("step.kind")),
            };
            steps.push(step);
        }
        let terminal = match j["terminal"]["kind"].as_str() {
            Some("scaled-u") => Terminal::ScaledU {
                c: parse_ratfun(
                    j["terminal"]["c"]
                        .as_str()
                        .ok_or(CertificateError::Malformed("terminal.c"))?,
                )?,
                power: j["terminal"]["power"]
                    .as_u64()
                    .ok_or(CertificateError::Malformed("terminal.power"))? as u32,
            },
            Some("single-dx") => Terminal::SingleDx {
                lead: parse_ratfun(
                    j["terminal"]["lead"]
                        .as_str()
                        .ok_or(CertificateError::Malformed("terminal.lead"))?,
                )?,
                beta: j["terminal"]["beta"]
                    .as_u64()
                    .ok_or(CertificateError::Malformed("terminal.beta"))? as u32,
            },
            _ => return Err(CertificateError::Malformed("terminal.kind")),
        };
        let rels: std::collections::BTreeSet<String> = [spec.name.clone()].into();
        let formula = crate::parse::parse_formula(
            j["formula_text"]
                .as_str()
                .ok_or(CertificateError::Malformed("formula_text"))?,
            &rels,
        )?;
        let chain_formulas = j["chain_formulas"]
            .as_array()
            .map(|arr| {
                arr.iter()
                    .map(|v| {
                        v.as_str()
                            .ok_or(CertificateError::Malformed("chain_formulas"))
                            .and_then(|s| {
                                crate::parse::parse_formula(s, &rels).map_err(Into::into)
                            })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?
            .unwrap_or_default();
        Ok(Definition {
            task: DefinitionTask { relation: spec, mode },
            formula,
            trace: DerivationTrace { coords, base, steps },
            terminal,
            chain_formulas,
        })
    }
}
