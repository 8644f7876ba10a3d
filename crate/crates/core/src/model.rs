//! Pipelines, promotion policies and their exact analytic evaluation.
//!
//! Masses are population masses: `q` is the probability that a random
//! candidate belongs to the group and is qualified, `u` that it belongs to
//! the group and is unqualified. All masses of a pipeline sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for analytic equalities.
pub const REL_TOL: f64 = 1e-9;

/// Pass probabilities of one test for qualified (`tau1`) and unqualified
/// (`tau0`) members of a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestStats {
    pub tau1: f64,
    pub tau0: f64,
}

impl TestStats {
    /// A minimally effective test: `0 <= tau0 < tau1 <= 1`.
    pub fn new(tau1: f64, tau0: f64) -> Result<Self> {
        let t = Self::weak(tau1, tau0)?;
        if !t.is_effective() {
            return Err(Error::InvalidTest {
                tau1,
                tau0,
                reason: "requires tau1 > tau0",
            });
        }
        Ok(t)
    }

    /// A test with `0 <= tau0 <= tau1 <= 1`. Uninformative tests
    /// (`tau1 == tau0`) can be evaluated but are rejected by the solvers.
    pub fn weak(tau1: f64, tau0: f64) -> Result<Self> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(tau1) || !unit(tau0) {
            return Err(Error::InvalidTest {
                tau1,
                tau0,
                reason: "rates must lie in [0,1]",
            });
        }
        if tau0 > tau1 {
            return Err(Error::InvalidTest {
                tau1,
                tau0,
                reason: "requires tau1 >= tau0",
            });
        }
        Ok(Self { tau1, tau0 })
    }

    pub fn is_effective(&self) -> bool {
        self.tau1 > self.tau0
    }

    /// `tau0 / tau1`, the false-to-true pass ratio.
    pub fn ratio(&self) -> f64 {
        self.tau0 / self.tau1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub id: String,
    pub q: f64,
    pub u: f64,
    pub stages: Vec<TestStats>,
}

impl Group {
    pub fn new(id: impl Into<String>, q: f64, u: f64, stages: Vec<TestStats>) -> Self {
        Self {
            id: id.into(),
            q,
            u,
            stages,
        }
    }

    /// `prod_i tau1^i`.
    pub fn pass_product(&self) -> f64 {
        self.stages.iter().map(|t| t.tau1).product()
    }

    /// `prod_i tau0^i / tau1^i`.
    pub fn ratio_product(&self) -> f64 {
        self.stages.iter().map(TestStats::ratio).product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pipeline {
    groups: Vec<Group>,
    k: usize,
}

impl Pipeline {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        let first = groups
            .first()
            .ok_or_else(|| Error::InvalidPipeline("no groups".into()))?;
        let k = first.stages.len();
        if k == 0 {
            return Err(Error::InvalidPipeline("pipelines need at least one stage".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        let mut total = 0.0;
        for g in &groups {
            if !ids.insert(g.id.as_str()) {
                return Err(Error::InvalidPipeline(format!("duplicate group id {:?}", g.id)));
            }
            if g.stages.len() != k {
                return Err(Error::InvalidPipeline(format!(
                    "group {:?} has {} stages, expected {k}",
                    g.id,
                    g.stages.len()
                )));
            }
            if !(g.q.is_finite() && g.q > 0.0) || !(g.u.is_finite() && g.u >= 0.0) {
                return Err(Error::InvalidPipeline(format!(
                    "group {:?} needs q > 0 and u >= 0 (q={}, u={})",
                    g.id, g.q, g.u
                )));
            }
            for t in &g.stages {
                TestStats::weak(t.tau1, t.tau0)?;
            }
            total += g.q + g.u;
        }
        if (total - 1.0).abs() > REL_TOL {
            return Err(Error::InvalidPipeline(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self { groups, k })
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Total qualified mass `||q||_1`.
    pub fn q_total(&self) -> f64 {
        self.groups.iter().map(|g| g.q).sum()
    }

    pub fn u_total(&self) -> f64 {
        self.groups.iter().map(|g| g.u).sum()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.id == id)
    }

    /// Errors unless every test is minimally effective.
    pub fn require_effective(&self) -> Result<()> {
        for g in &self.groups {
            for (i, t) in g.stages.iter().enumerate() {
                if !t.is_effective() {
                    return Err(Error::NotEffective {
                        group: g.id.clone(),
                        stage: i + 1,
                        tau1: t.tau1,
                        tau0: t.tau0,
                    });
                }
            }
        }
        Ok(())
    }

    /// Smallest `tau1` over all groups and stages.
    pub fn tau1_min(&self) -> f64 {
        self.groups
            .iter()
            .flat_map(|g| g.stages.iter().map(|t| t.tau1))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePolicy {
    pub pi1: f64,
    pub pi0: f64,
}

impl StagePolicy {
    pub const FULL_USE: Self = Self { pi1: 1.0, pi0: 0.0 };
    pub const BYPASS: Self = Self { pi1: 1.0, pi0: 1.0 };
    pub const REJECT: Self = Self { pi1: 0.0, pi0: 0.0 };

    pub fn new(pi1: f64, pi0: f64) -> Result<Self> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if unit(pi1) && unit(pi0) {
            Ok(Self { pi1, pi0 })
        } else {
            Err(Error::InvalidStagePolicy { pi1, pi0 })
        }
    }
}

impl std::fmt::Display for StagePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.pi1, self.pi0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPolicy {
    pub id: String,
    pub stages: Vec<StagePolicy>,
}

/// Per-group, per-stage promotion probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub groups: Vec<GroupPolicy>,
}

impl Policy {
    /// Builds a policy from rows given in the pipeline's group order.
    pub fn from_rows(pl: &Pipeline, rows: Vec<Vec<StagePolicy>>) -> Result<Self> {
        if rows.len() != pl.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} policy rows for {} groups",
                rows.len(),
                pl.len()
            )));
        }
        let groups = pl
            .groups()
            .iter()
            .zip(rows)
            .map(|(g, stages)| GroupPolicy {
                id: g.id.clone(),
                stages,
            })
            .collect();
        let pol = Self { groups };
        pol.aligned(pl)?;
        Ok(pol)
    }

    /// The same stage list for every group.
    pub fn shared(pl: &Pipeline, stages: Vec<StagePolicy>) -> Result<Self> {
        Self::from_rows(pl, vec![stages; pl.len()])
    }

    pub fn uniform(pl: &Pipeline, sp: StagePolicy) -> Self {
        Self::shared(pl, vec![sp; pl.k()]).expect("shape matches by construction")
    }

    pub fn bypass(pl: &Pipeline) -> Self {
        Self::uniform(pl, StagePolicy::BYPASS)
    }

    pub fn get(&self, id: &str) -> Option<&[StagePolicy]> {
        self.groups
            .iter()
            .find(|g| g.id == id)
            .map(|g| g.stages.as_slice())
    }

    /// Rows in pipeline group order, validated against the pipeline shape.
    pub fn aligned<'a>(&'a self, pl: &Pipeline) -> Result<Vec<&'a [StagePolicy]>> {
        if self.groups.len() != pl.len() {
            return Err(Error::ShapeMismatch(format!(
                "policy covers {} groups, pipeline has {}",
                self.groups.len(),
                pl.len()
            )));
        }
        pl.groups()
            .iter()
            .map(|g| {
                let row = self
                    .get(&g.id)
                    .ok_or_else(|| Error::ShapeMismatch(format!("no policy for group {:?}", g.id)))?;
                if row.len() != pl.k() {
                    return Err(Error::ShapeMismatch(format!(
                        "group {:?} has {} stage policies, expected {}",
                        g.id,
                        row.len(),
                        pl.k()
                    )));
                }
                for sp in row {
                    StagePolicy::new(sp.pi1, sp.pi0)?;
                }
                Ok(row)
            })
            .collect()
    }
}

/// Probabilities that a qualified (`M`) and an unqualified (`N`) candidate
/// are promoted past one stage.
pub fn stage_rates(t: TestStats, p: StagePolicy) -> (f64, f64) {
    let m = t.tau1 * p.pi1 + (1.0 - t.tau1) * p.pi0;
    let n = t.tau0 * p.pi1 + (1.0 - t.tau0) * p.pi0;
    (m, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub id: String,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub groups: Vec<GroupRates>,
    pub recall: f64,
    /// `None` when nobody reaches the final round.
    pub precision: Option<f64>,
}

impl Evaluation {
    pub fn precision_or_zero(&self) -> f64 {
        self.precision.unwrap_or(0.0)
    }

    pub fn rates(&self, id: &str) -> Option<&GroupRates> {
        self.groups.iter().find(|g| g.id == id)
    }
}

/// Recall and precision from per-group cumulative rates (pipeline order).
pub fn summarize(pl: &Pipeline, rates: &[(f64, f64)]) -> (f64, Option<f64>) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    for (g, &(tpr, fpr)) in pl.groups().iter().zip(rates) {
        tp += g.q * tpr;
        fp += g.u * fpr;
    }
    let recall = tp / pl.q_total();
    let precision = if tp + fp > 0.0 { Some(tp / (tp + fp)) } else { None };
    (recall, precision)
}

/// Cumulative `(tpr, fpr)` after each stage: `out[i][x]` for stage `i`,
/// group `x` in pipeline order.
pub fn trajectory(pl: &Pipeline, pol: &Policy) -> Result<Vec<Vec<(f64, f64)>>> {
    let rows = pol.aligned(pl)?;
    let mut out = Vec::with_capacity(pl.k());
    let mut acc = vec![(1.0, 1.0); pl.len()];
    for i in 0..pl.k() {
        for ((g, row), a) in pl.groups().iter().zip(&rows).zip(acc.iter_mut()) {
            let (m, n) = stage_rates(g.stages[i], row[i]);
            a.0 *= m;
            a.1 *= n;
        }
        out.push(acc.clone());
    }
    Ok(out)
}

pub fn evaluate(pl: &Pipeline, pol: &Policy) -> Result<Evaluation> {
    let traj = trajectory(pl, pol)?;
    let last = traj.last().expect("k >= 1");
    let (recall, precision) = summarize(pl, last);
    let groups = pl
        .groups()
        .iter()
        .zip(last)
        .map(|(g, &(tpr, fpr))| GroupRates {
            id: g.id.clone(),
            tpr,
            fpr,
        })
        .collect();
    Ok(Evaluation {
        groups,
        recall,
        precision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(a: f64, b: f64) -> TestStats {
        TestStats::weak(a, b).unwrap()
    }

    #[test]
    fn stage_rate_examples() {
        assert_eq!(stage_rates(t(0.75, 0.0), StagePolicy::BYPASS), (1.0, 1.0));
        assert_eq!(stage_rates(t(0.5, 0.5), StagePolicy::FULL_USE), (0.5, 0.5));
        let (m, n) = stage_rates(t(0.75, 0.0), StagePolicy::new(1.0, 0.75).unwrap());
        assert!((m - 15.0 / 16.0).abs() < 1e-15);
        assert!((n - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TestStats::new(0.5, 0.5).is_err());
        assert!(TestStats::weak(0.4, 0.5).is_err());
        assert!(TestStats::weak(1.2, 0.5).is_err());
        assert!(StagePolicy::new(1.0, -0.1).is_err());
        let g = |id: &str, q, u| Group::new(id, q, u, vec![t(0.9, 0.1)]);
        assert!(Pipeline::new(vec![g("A", 0.5, 0.4)]).is_err());
        assert!(Pipeline::new(vec![g("A", 0.5, 0.0), g("A", 0.5, 0.0)]).is_err());
        assert!(Pipeline::new(vec![g("A", 0.0, 1.0)]).is_err());
        assert!(Pipeline::new(vec![g("A", 0.5, 0.5)]).is_ok());
    }

    #[test]
    fn shape_mismatch_detected() {
        let pl = Pipeline::new(vec![Group::new("A", 0.5, 0.5, vec![t(0.9, 0.1); 2])]).unwrap();
        let pol = Policy {
            groups: vec![GroupPolicy {
                id: "A".into(),
                stages: vec![StagePolicy::BYPASS],
            }],
        };
        assert!(matches!(evaluate(&pl, &pol), Err(Error::ShapeMismatch(_))));
        let pol = Policy {
            groups: vec![GroupPolicy {
                id: "B".into(),
                stages: vec![StagePolicy::BYPASS; 2],
            }],
        };
        assert!(matches!(evaluate(&pl, &pol), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn empty_final_round_has_no_precision() {
        let pl = Pipeline::new(vec![Group::new("A", 0.3, 0.7, vec![t(0.9, 0.1)])]).unwrap();
        let ev = evaluate(&pl, &Policy::uniform(&pl, StagePolicy::REJECT)).unwrap();
        assert_eq!(ev.recall, 0.0);
        assert_eq!(ev.precision, None);
        let ev = evaluate(&pl, &Policy::bypass(&pl)).unwrap();
        assert_eq!(ev.recall, 1.0);
        assert!((ev.precision.unwrap() - 0.3).abs() < 1e-15);
    }
}
