//! Independent verification of produced definitions.
//!
//! The replay recomputes every certificate step from scratch with the
//! differential-polynomial kernel and compares exactly against the stored
//! results; it shares no code with the strategy that produced the trace, so
//! a fabricated step cannot slip through. The semantic check then samples
//! the emitted formula in the series model with zero tolerance for failures:
//! the symbolic layer claims exactness, so any failure is a hard bug.

use crate::definability::{
    default_u_chain, DerivationTrace, Definition, Terminal, TraceCoords, TraceStep,
};
use crate::diffpoly::{u_subst_map, DiffPoly, Var};
use crate::formula::RelationSpec;
use crate::ratfun::{RatFun, Rational};
use crate::series::ModelConfig;
use serde_json::{json, Value as Json};
use std::fmt;

/// Run independent sample closures, in parallel when the `parallel` feature
/// is enabled. Each closure derives its own generator from the sample index,
/// so the outcome does not depend on the execution order.
pub fn run_samples<T: Send>(k: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..k as u64).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..k as u64).map(f).collect()
    }
}

/// Always-sequential variant, kept for the benches that compare both paths.
pub fn run_samples_sequential<T>(k: usize, f: impl Fn(u64) -> T) -> Vec<T> {
    (0..k as u64).map(f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Verified,
    Refuted,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Verified => "verified",
            Verdict::Refuted => "refuted",
            Verdict::Inconclusive => "inconclusive",
        };
        write!(f, "{s}")
    }
}

/// Result of the exact trace replay.
#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub pass: bool,
    pub steps_checked: usize,
    pub first_divergence: Option<usize>,
    pub graph_preservation: bool,
    pub notes: Vec<String>,
}

/// Classification of the final trace item.
#[derive(Debug, Clone)]
pub enum TerminalClass {
    ScaledU { c: RatFun, power: u32 },
    SingleDx { lead: RatFun, beta: u32 },
    Other,
}

#[derive(Debug, Clone)]
pub struct TerminalReport {
    pub class: TerminalClass,
    pub polynomial: DiffPoly,
    pub well_formed: bool,
}

/// Result of the randomized semantic check.
#[derive(Debug, Clone)]
pub struct SemanticReport {
    pub samples: usize,
    pub positive_failures: usize,
    pub negative_failures: usize,
    pub inconclusive: usize,
    pub seed: u64,
    pub truncation: usize,
    pub t_offset: Rational,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub replay: ReplayReport,
    pub terminal: TerminalReport,
    pub semantic: SemanticReport,
    /// Documented Schwartz-Zippel-style bound on the probability that a
    /// nonzero certificate polynomial vanishes at one random sample.
    pub false_positive_bound: Rational,
    pub verdict: Verdict,
}

impl VerificationReport {
    pub fn to_json(&self) -> Json {
        json!({
            "schema": "defder.v1",
            "kind": "verification-report",
            "replay": {
                "pass": self.replay.pass,
                "steps_checked": self.replay.steps_checked,
                "first_divergence": self.replay.first_divergence,
                "graph_preservation": self.replay.graph_preservation,
                "notes": self.replay.notes,
            },
            "terminal": {
                "class": match &self.terminal.class {
                    TerminalClass::ScaledU { c, power } =>
                        json!({"kind": "scaled-u", "c": c.to_string(), "power": power}),
                    TerminalClass::SingleDx { lead, beta } =>
                        json!({"kind": "single-dx", "lead": lead.to_string(), "beta": beta}),
                    TerminalClass::Other => json!({"kind": "other"}),
                },
                "polynomial": self.terminal.polynomial.to_string(),
                "well_formed": self.terminal.well_formed,
            },
            "semantic": {
                "samples": self.semantic.samples,
                "positive_failures": self.semantic.positive_failures,
                "negative_failures": self.semantic.negative_failures,
                "inconclusive": self.semantic.inconclusive,
                "seed": self.semantic.seed,
                "truncation": self.semantic.truncation,
                "t_offset": self.semantic.t_offset.to_string(),
            },
            "false_positive_bound": self.false_positive_bound.to_string(),
            "verdict": self.verdict.to_string(),
        })
    }

    pub fn summary(&self) -> String {
        format!(
            "replay {} ({} steps), terminal {}, semantic {}/{} positive and {}/{} negative failures, verdict {}",
            if self.replay.pass { "pass" } else { "FAIL" },
            self.replay.steps_checked,
            match &self.terminal.class {
                TerminalClass::ScaledU { c, power } if *power == 1 => format!("({c}) * u"),
                TerminalClass::ScaledU { c, power } => format!("({c}) * u^{power}"),
                TerminalClass::SingleDx { lead, beta } =>
                    format!("({lead}) * x^{beta} * x' + Q(x)"),
                TerminalClass::Other => "other".into(),
            },
            self.semantic.positive_failures,
            self.semantic.samples,
            self.semantic.negative_failures,
            self.semantic.samples,
            self.verdict
        )
    }
}

fn classify_terminal(poly: &DiffPoly, coords: TraceCoords, x: &Var) -> TerminalClass {
    match coords {
        TraceCoords::U { chain } => {
            let us = default_u_chain(chain);
            if poly.num_terms() == 1 {
                let (m, c) = poly.terms().next().unwrap();
                let mut powers = m.powers();
                if let Some((d, e)) = powers.next() {
                    if powers.next().is_none() && d.var == us[0] && d.order == 0 {
                        return TerminalClass::ScaledU {
                            c: c.clone(),
                            power: e,
                        };
                    }
                }
            }
            TerminalClass::Other
        }
        TraceCoords::Explicit => {
            let dx1 = crate::diffpoly::DerIndet::new(x.clone(), 1);
            let dx0 = crate::diffpoly::DerIndet::new(x.clone(), 0);
            let mut lead = None;
            for (m, c) in poly.terms() {
                if m.powers().any(|(d, _)| d.order >= 1) {
                    if m.exponent(&dx1) == 1
                        && m.total_degree() == m.exponent(&dx0) + 1
                        && lead.is_none()
                    {
                        lead = Some((c.clone(), m.exponent(&dx0)));
                    } else {
                        return TerminalClass::Other;
                    }
                }
            }
            match lead {
                Some((lead, beta)) => TerminalClass::SingleDx { lead, beta },
                None => TerminalClass::Other,
            }
        }
    }
}

/// Recompute every step of the trace from scratch and compare exactly.
pub fn replay_trace(trace: &DerivationTrace, spec: &RelationSpec) -> (ReplayReport, TerminalReport) {
    let mut notes = Vec::new();
    let mut graph_ok = true;
    let mut items: Vec<DiffPoly> = vec![trace.base.clone()];
    let us = match trace.coords {
        TraceCoords::U { chain } => default_u_chain(chain),
        TraceCoords::Explicit => vec![],
    };
    let check_graph = |p: &DiffPoly, notes: &mut Vec<String>, graph_ok: &mut bool| {
        if let TraceCoords::U { .. } = trace.coords {
            if !p.collapse_u(&us).is_zero() {
                *graph_ok = false;
                notes.push("an item does not collapse to 0 on the graph".into());
            }
        }
    };
    check_graph(&trace.base, &mut notes, &mut graph_ok);

    let mut divergence = None;
    let mut steps_checked = 0usize;
    'replay: for (idx, step) in trace.steps.iter().enumerate() {
        match step {
            TraceStep::Substitute {
                alpha,
                beta,
                source,
                result,
            } => {
                steps_checked += 1;
                let Some(src) = items.get(*source) else {
                    divergence = Some(idx);
                    notes.push(format!("step {idx}: source index out of range"));
                    break 'replay;
                };
                let recomputed = match trace.coords {
                    TraceCoords::U { .. } => u_subst_map(&spec.x, &us, alpha, beta)
                        .map(|m| src.subst_diff(&m)),
                    TraceCoords::Explicit => src.subst_affine(&spec.x, alpha, beta),
                };
                match recomputed {
                    Ok(p) if &p == result => {
                        check_graph(&p, &mut notes, &mut graph_ok);
                        items.push(p);
                    }
                    Ok(_) => {
                        divergence = Some(idx);
                        notes.push(format!("step {idx}: substitution result diverges"));
                        break 'replay;
                    }
                    Err(e) => {
                        divergence = Some(idx);
                        notes.push(format!("step {idx}: {e}"));
                        break 'replay;
                    }
                }
            }
            TraceStep::Combine {
                coeffs,
                items: idxs,
                result,
            } => {
                steps_checked += 1;
                if coeffs.len() != idxs.len() {
                    divergence = Some(idx);
                    notes.push(format!("step {idx}: malformed combination"));
                    break 'replay;
                }
                let mut acc = DiffPoly::zero();
                for (c, i) in coeffs.iter().zip(idxs) {
                    let Some(item) = items.get(*i) else {
                        divergence = Some(idx);
                        notes.push(format!("step {idx}: item index out of range"));
                        break 'replay;
                    };
                    acc = &acc + &(c * item);
                }
                if divergence.is_some() {
                    break 'replay;
                }
                if &acc == result {
                    check_graph(&acc, &mut notes, &mut graph_ok);
                    items.push(acc);
                } else {
                    divergence = Some(idx);
                    notes.push(format!("step {idx}: combination result diverges"));
                    break 'replay;
                }
            }
            TraceStep::Witness { .. } => {}
        }
    }

    // Explicit chains: the reverse-lex degree must strictly decrease along
    // the combination results.
    if divergence.is_none() {
        if let TraceCoords::Explicit = trace.coords {
            let mut degrees = Vec::new();
            degrees.push(trace.base.n1_degree(&spec.x));
            for r in trace.combine_results() {
                degrees.push(r.n1_degree(&spec.x));
            }
            for pair in degrees.windows(2) {
                match (&pair[0], &pair[1]) {
                    (Ok(a), Ok(b)) if b < a => {}
                    _ => {
                        graph_ok = false;
                        notes.push(
                            "reverse-lex degree does not strictly decrease along the chain".into(),
                        );
                        break;
                    }
                }
            }
        }
    }

    let final_poly = items.last().cloned().unwrap_or_else(DiffPoly::zero);
    let class = classify_terminal(&final_poly, trace.coords, &spec.x);
    let well_formed = match (&class, trace.coords) {
        (TerminalClass::ScaledU { c, power }, TraceCoords::U { .. }) => {
            !c.is_zero() && *power >= 1
        }
        (TerminalClass::SingleDx { lead, .. }, TraceCoords::Explicit) => !lead.is_zero(),
        _ => false,
    };
    let pass = divergence.is_none() && graph_ok;
    (
        ReplayReport {
            pass,
            steps_checked,
            first_divergence: divergence,
            graph_preservation: graph_ok,
            notes,
        },
        TerminalReport {
            class,
            polynomial: final_poly,
            well_formed,
        },
    )
}

/// Randomized semantic validation of the emitted formula: the definition must
/// hold at K pseudo-generic graph tuples and fail at K off-graph tuples.
pub fn semantic_check(
    def: &Definition,
    cfg: &ModelConfig,
    samples: usize,
) -> SemanticReport {
    let spec = &def.task.relation;
    // Pick an expansion point avoiding poles of every coefficient in sight
    // and zeros of the terminal scalar.
    let mut coeffs: Vec<RatFun> = def.formula.atom_coefficients();
    for p in &spec.defining {
        coeffs.extend(p.terms().map(|(_, c)| c.clone()));
    }
    for w in def.witnesses().values() {
        coeffs.extend(w.terms().map(|(_, c)| c.clone()));
    }
    let nonzero: Vec<RatFun> = match &def.terminal {
        Terminal::ScaledU { c, .. } => vec![c.clone()],
        Terminal::SingleDx { lead, .. } => vec![lead.clone()],
    };
    let cfg = cfg.choose_offset(coeffs.iter(), nonzero.iter());
    let witnesses = def.witnesses();
    let outcomes = run_samples(samples, |i| {
        crate::definability::dformula_sample(
            &def.formula,
            spec,
            &spec.x,
            &spec.chain,
            &witnesses,
            &cfg,
            i,
        )
    });
    SemanticReport {
        samples,
        positive_failures: outcomes.iter().filter(|o| !o.positive_ok).count(),
        negative_failures: outcomes.iter().filter(|o| !o.negative_ok).count(),
        inconclusive: outcomes.iter().filter(|o| o.inconclusive).count(),
        seed: cfg.seed,
        truncation: cfg.truncation,
        t_offset: cfg.t_offset.clone(),
    }
}

/// Full verification: exact replay, terminal classification, and semantic
/// sampling. `verified` requires all three clean.
pub fn verify_definition(
    def: &Definition,
    cfg: &ModelConfig,
    samples: usize,
) -> VerificationReport {
    let (replay, terminal) = replay_trace(&def.trace, &def.task.relation);
    let semantic = semantic_check(def, cfg, samples);
    let verdict = if !replay.pass
        || !terminal.well_formed
        || semantic.positive_failures > 0
        || semantic.negative_failures > 0
    {
        Verdict::Refuted
    } else if semantic.inconclusive > 0 {
        Verdict::Inconclusive
    } else {
        Verdict::Verified
    };
    let degree = terminal.polynomial.total_degree().max(1) as i64;
    let space = cfg.coeff_bound * cfg.coeff_bound;
    VerificationReport {
        replay,
        terminal,
        semantic,
        false_positive_bound: Rational::new(degree.into(), space.into()),
        verdict,
    }
}

/// Systematic single-field mutations of a trace for sensitivity testing:
/// every mutation must flip the verifier's verdict. Names identify the
/// mutated field.
pub fn single_field_mutations(trace: &DerivationTrace) -> Vec<(String, DerivationTrace)> {
    let mut out = Vec::new();
    let bump = |p: &DiffPoly| p + &DiffPoly::one();
    {
        let mut t = trace.clone();
        t.base = bump(&t.base);
        out.push(("base".to_string(), t));
    }
    for (i, step) in trace.steps.iter().enumerate() {
        match step {
            TraceStep::Substitute {
                alpha,
                beta,
                source,
                result,
            } => {
                let mut with = |name: &str, s: TraceStep| {
                    let mut t = trace.clone();
                    t.steps[i] = s;
                    out.push((format!("step{i}.{name}"), t));
                };
                with(
                    "alpha",
                    TraceStep::Substitute {
                        alpha: &alpha.clone() + &RatFun::one(),
                        beta: beta.clone(),
                        source: *source,
                        result: result.clone(),
                    },
                );
                with(
                    "beta",
                    TraceStep::Substitute {
                        alpha: alpha.clone(),
                        beta: &beta.clone() + &RatFun::one(),
                        source: *source,
                        result: result.clone(),
                    },
                );
                with(
                    "source",
                    TraceStep::Substitute {
                        alpha: alpha.clone(),
                        beta: beta.clone(),
                        source: source + 1,
                        result: result.clone(),
                    },
                );
                with(
                    "result",
                    TraceStep::Substitute {
                        alpha: alpha.clone(),
                        beta: beta.clone(),
                        source: *source,
                        result: bump(result),
                    },
                );
            }
            TraceStep::Combine {
                coeffs,
                items,
                result,
            } => {
                let mut with = |name: &str, s: TraceStep| {
                    let mut t = trace.clone();
                    t.steps[i] = s;
                    out.push((format!("step{i}.{name}"), t));
                };
                for k in 0..coeffs.len() {
                    let mut c2 = coeffs.clone();
                    c2[k] = bump(&c2[k]);
                    with(
                        &format!("coeff{k}"),
                        TraceStep::Combine {
                            coeffs: c2,
                            items: items.clone(),
                            result: result.clone(),
                        },
                    );
                }
                for k in 0..items.len() {
                    let mut i2 = items.clone();
                    i2[k] += 1;
                    with(
                        &format!("item{k}"),
                        TraceStep::Combine {
                            coeffs: coeffs.clone(),
                            items: i2,
                            result: result.clone(),
                        },
                    );
                }
                with(
                    "result",
                    TraceStep::Combine {
                        coeffs: coeffs.clone(),
                        items: items.clone(),
                        result: bump(result),
                    },
                );
            }
            TraceStep::Witness { .. } => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::definability::{define_from_curve, DefinitionTask, Mode};
    use crate::parse::parse_poly;

    fn worked_example() -> Definition {
        let task = DefinitionTask {
            relation: RelationSpec {
                name: "E".into(),
                x: Var::base("x"),
                chain: vec![Var::target(1, "y")],
                defining: vec![parse_poly("(y' - x'')*x'").unwrap()],
                side: None,
            },
            mode: Mode::Curve,
        };
        define_from_curve(task).unwrap()
    }

    #[test]
    fn golden_trace_replays() {
        let def = worked_example();
        let (replay, terminal) = replay_trace(&def.trace, &def.task.relation);
        assert!(replay.pass);
        assert!(replay.graph_preservation);
        assert!(terminal.well_formed);
        assert!(matches!(
            terminal.class,
            TerminalClass::ScaledU { power: 1, .. }
        ));
    }

    #[test]
    fn perturbed_trace_fails_at_the_step() {
        let def = worked_example();
        let mut trace = def.trace.clone();
        // Perturb the first combination's stored result by +1.
        let pos = trace
            .steps
            .iter()
            .position(|s| matches!(s, TraceStep::Combine { .. }))
            .unwrap();
        if let TraceStep::Combine { result, .. } = &mut trace.steps[pos] {
            *result = &result.clone() + &DiffPoly::one();
        }
        let (replay, _) = replay_trace(&trace, &def.task.relation);
        assert!(!replay.pass);
        assert_eq!(replay.first_divergence, Some(pos));
    }

    #[test]
    fn empty_trace_for_graph_relation_passes() {
        let task = DefinitionTask {
            relation: RelationSpec {
                name: "E".into(),
                x: Var::base("x"),
                chain: vec![Var::target(1, "y")],
                defining: vec![parse_poly("y - x'").unwrap()],
                side: None,
            },
            mode: Mode::Curve,
        };
        let def = define_from_curve(task).unwrap();
        let (replay, terminal) = replay_trace(&def.trace, &def.task.relation);
        assert!(replay.pass);
        assert!(matches!(
            terminal.class,
            TerminalClass::ScaledU { power: 1, ref c } if c.is_one()
        ));
    }

    #[test]
    fn full_verification_of_worked_example() {
        let def = worked_example();
        let report = verify_definition(&def, &ModelConfig::default(), 25);
        assert_eq!(report.verdict, Verdict::Verified, "{}", report.summary());
        assert_eq!(report.semantic.positive_failures, 0);
        assert_eq!(report.semantic.negative_failures, 0);
    }

    #[test]
    fn parallel_and_sequential_sampling_agree() {
        let outcomes_par = run_samples(16, |i| i * i);
        let outcomes_seq = run_samples_sequential(16, |i| i * i);
        assert_eq!(outcomes_par, outcomes_seq);
    }
}
