//! Equalized Odds: the precision ceiling, the construction showing how far
//! it can fall below the Equal Opportunity optimum, and the structure check
//! for optimal single-stage policies.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Group, Pipeline, Policy, TestStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EoddsBound {
    pub value: f64,
    /// `max_X prod_i tau0/tau1`.
    pub rho: f64,
}

/// No Equalized Odds policy has precision above `Q / (Q + rho·U)`.
pub fn eodds_precision_bound(pl: &Pipeline) -> EoddsBound {
    let rho = pl
        .groups()
        .iter()
        .map(Group::ratio_product)
        .fold(0.0, f64::max);
    let q = pl.q_total();
    EoddsBound {
        value: q / (q + rho * pl.u_total()),
        rho,
    }
}

/// A pipeline where one group `X*` has ratio `(1-delta)^k` and the others
/// ratio 0. Every group has qualified mass `gamma/n_groups`; `X*` has
/// unqualified mass `mu` and the rest share `1-gamma-mu`.
pub fn gap_instance(gamma: f64, mu: f64, delta: f64, k: usize, n_groups: usize) -> Result<Pipeline> {
    let bad = |m: String| Err(Error::InvalidParams(m));
    if n_groups < 2 || k == 0 {
        return bad(format!("need k >= 1 and at least two groups (k={k}, n_groups={n_groups})"));
    }
    if !(gamma > 0.0 && mu > 0.0 && gamma + mu < 1.0) {
        return bad(format!("masses leave (0,1): gamma={gamma}, mu={mu}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return bad(format!("delta must lie in (0,1), got {delta}"));
    }
    let q = gamma / n_groups as f64;
    let u_rest = (1.0 - gamma - mu) / (n_groups - 1) as f64;
    let star = TestStats::new(1.0, 1.0 - delta)?;
    let sharp = TestStats::new(1.0, 0.0)?;
    let groups = (0..n_groups)
        .map(|x| {
            if x == 0 {
                Group::new("X0", q, mu, vec![star; k])
            } else {
                Group::new(format!("X{x}"), q, u_rest, vec![sharp; k])
            }
        })
        .collect();
    Pipeline::new(groups)
}

/// For a single-stage Equalized Odds policy: true when the policy is
/// trivial (all entries 0 or all 1) or its smallest entry is 0.
pub fn verify_eodds_structure(pl: &Pipeline, pol: &Policy, tolerance: f64) -> Result<bool> {
    if pl.k() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "structure check needs a single stage, pipeline has {}",
            pl.k()
        )));
    }
    let rows = pol.aligned(pl)?;
    let entries: Vec<f64> = rows.iter().flat_map(|r| [r[0].pi1, r[0].pi0]).collect();
    let trivial = entries.iter().all(|&v| v.abs() <= tolerance) || entries.iter().all(|&v| (1.0 - v).abs() <= tolerance);
    let min = entries.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(trivial || min <= tolerance)
}
