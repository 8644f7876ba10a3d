use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::exact::Configuration;
use crate::model::{evaluate, Evaluation, Pipeline, Policy};
use crate::objective::Objective;
use crate::oracle::Constraint;
use crate::ratio::RatioPolicyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ratio,
    TwoApprox,
    Exact,
    Fptas,
    Groupblind,
    Oracle,
    StructuredOracle,
}

/// Which candidate a report's policy came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Bypass,
    Ratio,
    Dp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Certificate {
    Ratio {
        policy_kind: RatioPolicyKind,
        max_precision: f64,
    },
    TwoApprox {
        bypass_score: f64,
        ratio_score: f64,
        chosen: Source,
    },
    Exact {
        configuration_index: u64,
        configuration: Configuration,
        t_star: f64,
    },
    Fptas {
        chosen: Source,
        eps_bar: f64,
        l_tpr: usize,
        l_fpr: usize,
        tpr_index: Option<usize>,
        fpr_indices: Option<Vec<usize>>,
    },
    Groupblind {
        chosen: Source,
        eps_bar: f64,
        l_tpr: usize,
        l_fpr: usize,
        tpr_index: Option<usize>,
        fpr_indices: Option<Vec<usize>>,
        /// Objective value of the policy evaluated exactly.
        evaluated_score: f64,
        /// Largest pairwise gap of the final tpr values.
        residual_gap: f64,
    },
    Grid {
        steps: u32,
        tolerance: f64,
        constraint: Constraint,
        accepted: u64,
    },
    Structured {
        configuration_index: u64,
        configuration: Configuration,
        t_star: f64,
        t_resolution: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub configs_enumerated: u64,
    pub configs_feasible: u64,
    pub dp_cells: u64,
    pub cell_updates: u64,
    pub candidates_scored: u64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverReport {
    pub method: Method,
    pub objective: String,
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
    pub policy: Policy,
    pub evaluation: Evaluation,
    pub score: f64,
    pub certificate: Certificate,
    pub diagnostics: Diagnostics,
}

impl SolverReport {
    /// Evaluates `policy` and scores it. Timing is measured from `started`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        method: Method,
        pl: &Pipeline,
        objective: &Objective,
        eps: Option<f64>,
        policy: Policy,
        certificate: Certificate,
        mut diagnostics: Diagnostics,
        started: Instant,
    ) -> Result<Self> {
        let evaluation = evaluate(pl, &policy)?;
        let score = objective.score(evaluation.recall, evaluation.precision);
        diagnostics.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(Self {
            method,
            objective: objective.label(),
            alpha: objective.alpha(),
            eps,
            policy,
            evaluation,
            score,
            certificate,
            diagnostics,
        })
    }
}
