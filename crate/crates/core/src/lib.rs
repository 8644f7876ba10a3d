//! Fair promotion policies for multi-stage screening pipelines.
//!
//! A pipeline screens candidates from several groups through `k` noisy
//! tests. A policy decides, per group and stage, how likely a candidate who
//! passed (`pi1`) or failed (`pi0`) the test is to move on. The crate
//! evaluates policies, checks Equal Opportunity and Equalized Odds, and
//! searches for fair policies that trade off recall and precision.
//!
//! The `examples/` directory walks through each capability:
//!
//! - `evaluate_policy`: build a pipeline, evaluate a policy, check fairness.
//! - `opportunity_ratio`: the precision-optimal fair policy and its bound.
//! - `exact_solver`: exact optimization of mixed objectives.
//! - `fptas`: the approximation scheme and its DP tables.
//! - `group_blind`: one shared policy for every group.
//! - `equalized_odds`: the precision ceiling under Equalized Odds.
//! - `monte_carlo`: simulation against the analytic rates.
//! - `reproduce`: the built-in worked examples with their assertions.
//!
//! ```
//! use fair_screen::model::{evaluate, Group, Pipeline, Policy, TestStats};
//! use fair_screen::ratio::{max_precision, opportunity_ratio, RatioPolicyKind};
//!
//! let pl = Pipeline::new(vec![
//!     Group::new("A", 0.25, 0.25, vec![TestStats::new(1.0, 0.5)?]),
//!     Group::new("B", 0.25, 0.25, vec![TestStats::new(0.8, 0.5)?]),
//! ])?;
//! let pol = opportunity_ratio(&pl, RatioPolicyKind::FirstStage)?;
//! let ev = evaluate(&pl, &pol)?;
//! assert!((ev.precision.unwrap() - max_precision(&pl)).abs() < 1e-12);
//! # Ok::<(), fair_screen::Error>(())
//! ```

pub mod cli;
pub mod eodds;
pub mod error;
pub mod exact;
pub mod fairness;
pub mod fptas;
pub mod groupblind;
pub mod model;
pub mod objective;
pub mod oracle;
pub mod ratio;
pub mod report;
pub mod repro;

pub use error::{Error, Result};
pub use model::{evaluate, Evaluation, Group, Pipeline, Policy, StagePolicy, TestStats};
pub use objective::Objective;
pub use report::SolverReport;
