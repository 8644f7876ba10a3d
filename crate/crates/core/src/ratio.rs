//! Closed-form precision maximization: the Opportunity Ratio policy, the
//! maximum achievable precision, and the 2-approximation for linear
//! objectives.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Pipeline, Policy, StagePolicy};
use crate::objective::Objective;
use crate::report::{Certificate, Diagnostics, Method, Source, SolverReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioPolicyKind {
    /// All tpr correction happens at stage 1.
    FirstStage,
    /// Each stage equalizes its own pass rates.
    PerStage,
}

/// Index of the smallest value; ties go to the lexicographically smallest id.
fn argmin_by_id(pl: &Pipeline, value: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    for x in 1..pl.len() {
        let (v, b) = (value(x), value(best));
        if v < b || (v == b && pl.groups()[x].id < pl.groups()[best].id) {
            best = x;
        }
    }
    best
}

/// The precision-maximizing Equal Opportunity policy. Every group promotes
/// a ratio of its passers so that its tpr matches the weakest group's.
pub fn opportunity_ratio(pl: &Pipeline, kind: RatioPolicyKind) -> Result<Policy> {
    pl.require_effective()?;
    let groups = pl.groups();
    let rows = match kind {
        RatioPolicyKind::FirstStage => {
            let star = argmin_by_id(pl, |x| groups[x].pass_product());
            groups
                .iter()
                .map(|g| {
                    let pi1: f64 = g
                        .stages
                        .iter()
                        .zip(&groups[star].stages)
                        .map(|(t, s)| s.tau1 / t.tau1)
                        .product();
                    let mut row = vec![StagePolicy::FULL_USE; pl.k()];
                    row[0] = StagePolicy { pi1, pi0: 0.0 };
                    row
                })
                .collect()
        }
        RatioPolicyKind::PerStage => {
            let stars: Vec<usize> = (0..pl.k())
                .map(|i| argmin_by_id(pl, |x| groups[x].stages[i].tau1))
                .collect();
            groups
                .iter()
                .map(|g| {
                    (0..pl.k())
                        .map(|i| StagePolicy {
                            pi1: groups[stars[i]].stages[i].tau1 / g.stages[i].tau1,
                            pi0: 0.0,
                        })
                        .collect()
                })
                .collect()
        }
    };
    Policy::from_rows(pl, rows)
}

/// `||q||_1 / (||q||_1 + sum_X u_X prod_i tau0/tau1)`, the largest precision
/// of any Equal Opportunity policy.
pub fn max_precision(pl: &Pipeline) -> f64 {
    let q = pl.q_total();
    let fp: f64 = pl.groups().iter().map(|g| g.u * g.ratio_product()).sum();
    q / (q + fp)
}

/// The better of all-bypass and the first-stage Opportunity Ratio policy.
/// Within a factor 2 of the optimum for any linear objective.
pub fn two_approx(pl: &Pipeline, objective: &Objective) -> Result<SolverReport> {
    let started = Instant::now();
    let Objective::Linear { alpha } = *objective else {
        return Err(Error::IncompatibleObjective {
            objective: objective.label(),
            solver: "two-approx",
        });
    };
    objective.validate()?;
    let bypass = Policy::bypass(pl);
    let ratio = opportunity_ratio(pl, RatioPolicyKind::FirstStage)?;
    let bypass_score = (1.0 - alpha) + alpha * pl.q_total();
    let ev = crate::model::evaluate(pl, &ratio)?;
    let ratio_score = objective.score(ev.recall, ev.precision);
    let (chosen, policy) = if ratio_score > bypass_score {
        (Source::Ratio, ratio)
    } else {
        (Source::Bypass, bypass)
    };
    let diagnostics = Diagnostics {
        candidates_scored: 2,
        ..Default::default()
    };
    SolverReport::assemble(
        Method::TwoApprox,
        pl,
        objective,
        None,
        policy,
        Certificate::TwoApprox {
            bypass_score,
            ratio_score,
            chosen,
        },
        diagnostics,
        started,
    )
}

/// Report wrapper around [`opportunity_ratio`] for the precision objective.
pub fn solve_ratio(pl: &Pipeline, kind: RatioPolicyKind) -> Result<SolverReport> {
    let started = Instant::now();
    let policy = opportunity_ratio(pl, kind)?;
    SolverReport::assemble(
        Method::Ratio,
        pl,
        &Objective::precision(),
        None,
        policy,
        Certificate::Ratio {
            policy_kind: kind,
            max_precision: max_precision(pl),
        },
        Diagnostics {
            candidates_scored: 1,
            ..Default::default()
        },
        started,
    )
}
