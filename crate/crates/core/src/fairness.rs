//! Equal Opportunity and Equalized Odds checks on cumulative rates.

use serde::Serialize;

use crate::error::Result;
use crate::model::{trajectory, Pipeline, Policy};

/// Default tolerance for user-facing fairness checks.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Criterion {
    #[serde(rename = "EO")]
    Eo,
    #[serde(rename = "EOdds")]
    Eodds,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Self::Eo => "EO",
            Self::Eodds => "EOdds",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Final,
    PerStage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub criterion: Criterion,
    pub scope: Scope,
    pub satisfied: bool,
    pub max_gap: f64,
    /// Groups realizing `max_gap` (lower rate first); `None` with one group.
    pub witness: Option<(String, String)>,
    /// 1-based stage at which the worst gap occurs.
    pub stage: usize,
}

pub fn check_eo(pl: &Pipeline, pol: &Policy, tolerance: f64, scope: Scope) -> Result<FairnessReport> {
    check(pl, pol, tolerance, scope, Criterion::Eo)
}

pub fn check_eodds(
    pl: &Pipeline,
    pol: &Policy,
    tolerance: f64,
    scope: Scope,
) -> Result<FairnessReport> {
    check(pl, pol, tolerance, scope, Criterion::Eodds)
}

/// Largest pairwise gap and the (argmin, argmax) realizing it.
fn spread(values: impl Iterator<Item = f64>) -> (f64, usize, usize) {
    let mut lo = (f64::INFINITY, 0);
    let mut hi = (f64::NEG_INFINITY, 0);
    for (i, v) in values.enumerate() {
        if v < lo.0 {
            lo = (v, i);
        }
        if v > hi.0 {
            hi = (v, i);
        }
    }
    (hi.0 - lo.0, lo.1, hi.1)
}

fn check(
    pl: &Pipeline,
    pol: &Policy,
    tolerance: f64,
    scope: Scope,
    criterion: Criterion,
) -> Result<FairnessReport> {
    let traj = trajectory(pl, pol)?;
    let stages = match scope {
        Scope::Final => pl.k() - 1..pl.k(),
        Scope::PerStage => 0..pl.k(),
    };
    let mut worst = (0.0, 0, 0, stages.start);
    for i in stages {
        let rates = &traj[i];
        let mut cands = vec![spread(rates.iter().map(|r| r.0))];
        if criterion == Criterion::Eodds {
            cands.push(spread(rates.iter().map(|r| r.1)));
        }
        for (gap, lo, hi) in cands {
            if gap > worst.0 {
                worst = (gap, lo, hi, i);
            }
        }
    }
    let (max_gap, lo, hi, stage) = worst;
    let witness = (pl.len() > 1).then(|| {
        let (a, b) = if max_gap > 0.0 { (lo, hi) } else { (0, 1) };
        (pl.groups()[a].id.clone(), pl.groups()[b].id.clone())
    });
    Ok(FairnessReport {
        criterion,
        scope,
        satisfied: max_gap <= tolerance,
        max_gap,
        witness,
        stage: stage + 1,
    })
}
