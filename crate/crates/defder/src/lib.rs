//! Exact symbolic toolkit for reducts of differentially closed fields.
//!
//! Given a differential-algebraic relation E over Q(t), the library mechanically
//! constructs an explicit first-order formula in the reduct language
//! {+, ·, 0, 1, t, E} defining the derivation y = Dx, together with a replayable
//! certificate of the construction. Every emitted definition is checked twice:
//! an exact symbolic replay of the certificate, and randomized sampling in a
//! truncated-power-series model.
//!
//! Module map:
//! - [`ratfun`] — exact arithmetic in Q and the base differential field Q(t)
//! - [`diffpoly`] — sparse differential polynomials, term orders, substitution
//! - [`series`] — truncated formal power series, the desk-scale semantic model
//! - [`formula`] — the reduct-language formula AST, printing and evaluation
//! - [`parse`] — the input DSL for polynomials and formulas
//! - [`definability`] — the construction pipelines and the witness finder
//! - [`verify`] — certificate replay and randomized semantic validation
//! - [`corpus`] — seeded random generators for stress suites and benches

pub mod corpus;
pub mod definability;
pub mod diffpoly;
pub mod formula;
pub mod parse;
pub mod ratfun;
pub mod series;
pub mod verify;

pub use definability::{
    algebraic_front, contains_graph, define, define_from_curve, define_from_explicit,
    define_from_general_curve, define_from_multi, deparametrize, is_d_formula, nonzero_witness,
    DefinabilityError, Definition, DefinitionTask, DerivationTrace, GuardedFormula, Mode,
    Terminal, TraceStep,
};
pub use diffpoly::{DegreeVector, DerIndet, DiffPoly, Monomial, Role, Var};
pub use formula::{AlgTerm, Formula, RelationSpec, SideCondition};
pub use ratfun::{Poly, RatFun, Rational};
pub use series::{ModelConfig, TruncSeries};
pub use verify::{verify_definition, VerificationReport, Verdict};
