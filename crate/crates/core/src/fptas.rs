//! FPTAS for Equal Opportunity optimization.
//!
//! Each group gets a boolean table `M[i, j1, j0]`: true when some policy on
//! the first `i+1` stages has tpr at least `v(j1)` and fpr at most `v(j0)`,
//! where `v(j) = (1-eps_bar)^j`. Groups are combined on a common tpr index
//! and the resulting policy is scaled down at stage 1 to exact equality.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{evaluate, Group, Pipeline, Policy, StagePolicy, TestStats};
use crate::objective::Objective;
use crate::ratio::{opportunity_ratio, RatioPolicyKind};
use crate::report::{Certificate, Diagnostics, Method, Source, SolverReport};

/// Slack on the fpr side of a feasibility test.
const FEAS_TOL: f64 = 1e-12;

/// Geometric grid `v(j) = (1-eps_bar)^j` for `j` in `0..=l`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub eps_bar: f64,
    pub lower_tpr: f64,
    pub lower_fpr: f64,
    pub l_tpr: usize,
    pub l_fpr: usize,
    #[serde(skip)]
    values: Vec<f64>,
}

impl Grid {
    pub fn new(eps_bar: f64, lower_tpr: f64, lower_fpr: f64) -> Result<Self> {
        if !(eps_bar > 0.0 && eps_bar < 1.0) {
            return Err(Error::InvalidEps(eps_bar));
        }
        for (name, l) in [("lower_tpr", lower_tpr), ("lower_fpr", lower_fpr)] {
            if !(l > 0.0 && l <= 1.0) {
                return Err(Error::InvalidBounds(format!("{name} must lie in (0,1], got {l}")));
            }
        }
        let l_tpr = Self::index_bound(eps_bar, lower_tpr);
        let l_fpr = Self::index_bound(eps_bar, lower_fpr);
        let values = (0..=l_tpr.max(l_fpr))
            .map(|j| (1.0 - eps_bar).powi(j as i32))
            .collect();
        Ok(Self {
            eps_bar,
            lower_tpr,
            lower_fpr,
            l_tpr,
            l_fpr,
            values,
        })
    }

    /// `ceil(log_{1-eps_bar} lower)`.
    pub fn index_bound(eps_bar: f64, lower: f64) -> usize {
        (lower.ln() / (1.0 - eps_bar).ln()).ceil().max(0.0) as usize
    }

    pub fn value(&self, j: usize) -> f64 {
        self.values
            .get(j)
            .copied()
            .unwrap_or_else(|| (1.0 - self.eps_bar).powi(j as i32))
    }
}

/// The cheapest stage policy reaching tpr factor `a`, with its fpr factor.
fn min_fpr_point(t: TestStats, a: f64) -> Option<(f64, f64, f64)> {
    if a <= 0.0 {
        return Some((0.0, 0.0, 0.0));
    }
    if a <= t.tau1 {
        let x = a / t.tau1;
        return Some((x, 0.0, t.tau0 * x));
    }
    if a > 1.0 {
        return None;
    }
    let y = ((a - t.tau1) / (1.0 - t.tau1)).min(1.0);
    Some((1.0, y, t.tau0 + (1.0 - t.tau0) * y))
}

/// A stage policy `(x, y)` with `tau1·x + (1-tau1)·y >= a` and
/// `tau0·x + (1-tau0)·y <= b`, if one exists. The returned point has the
/// smallest fpr factor among all points meeting `a`.
pub fn stage_feasible(t: TestStats, a: f64, b: f64) -> Option<(f64, f64)> {
    let (x, y, n) = min_fpr_point(t, a)?;
    (n <= b + FEAS_TOL).then_some((x, y))
}

/// How increments are scanned when filling stages after the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DpMode {
    /// Every `(j1 <= tpr, j0 <= fpr)` increment is examined for every cell.
    Literal,
    /// The fpr increment is resolved in O(1) from the previous stage's
    /// monotone rows. Same table and witnesses as `Literal`.
    #[default]
    Monotone,
}

const NO_PARENT: (u32, u32) = (u32::MAX, u32::MAX);

#[derive(Debug, Clone)]
pub struct DpTable {
    pub k: usize,
    pub l_tpr: usize,
    pub l_fpr: usize,
    cells: Vec<bool>,
    parents: Vec<(u32, u32)>,
    pub cell_updates: u64,
}

impl DpTable {
    fn idx(&self, i: usize, j1: usize, j0: usize) -> usize {
        (i * (self.l_tpr + 1) + j1) * (self.l_fpr + 1) + j0
    }

    /// Stage `i` is 0-based.
    pub fn get(&self, i: usize, j1: usize, j0: usize) -> bool {
        self.cells[self.idx(i, j1, j0)]
    }

    /// The increments `(j1, j0)` used at stage `i` to reach this cell.
    pub fn parent(&self, i: usize, j1: usize, j0: usize) -> Option<(usize, usize)> {
        let p = self.parents[self.idx(i, j1, j0)];
        (p != NO_PARENT).then_some((p.0 as usize, p.1 as usize))
    }

    /// Largest `j0` (smallest fpr) with a true cell at `(i, j1)`.
    pub fn max_fpr_index(&self, i: usize, j1: usize) -> Option<usize> {
        (0..=self.l_fpr).rev().find(|&j0| self.get(i, j1, j0))
    }

    pub fn cell_count(&self) -> u64 {
        self.cells.len() as u64
    }

    /// Per-stage `(x, y)` along the parent chain ending at the last stage.
    pub fn reconstruct(&self, group: &Group, grid: &Grid, j1: usize, j0: usize) -> Option<Vec<StagePolicy>> {
        self.reconstruct_prefix(group, grid, self.k - 1, j1, j0)
    }

    /// Stage policies for stages `0..=stage` along the chain ending at
    /// `(stage, j1, j0)`.
    pub fn reconstruct_prefix(
        &self,
        group: &Group,
        grid: &Grid,
        stage: usize,
        j1: usize,
        j0: usize,
    ) -> Option<Vec<StagePolicy>> {
        if !self.get(stage, j1, j0) {
            return None;
        }
        let mut out = vec![StagePolicy::REJECT; stage + 1];
        let (mut t, mut f) = (j1, j0);
        for i in (0..=stage).rev() {
            let (d1, d0) = self.parent(i, t, f)?;
            let (x, y) = stage_feasible(group.stages[i], grid.value(d1), grid.value(d0))?;
            out[i] = StagePolicy { pi1: x, pi0: y };
            t -= d1;
            f -= d0;
        }
        Some(out)
    }
}

/// Number of cell updates a table build performs:
/// `(l_t+1)(l_f+1)` for the first stage, then per later stage
/// `T(l_t)·T(l_f)` (literal) or `T(l_t)·(l_f+1)` (monotone), `T(l) = (l+1)(l+2)/2`.
pub fn expected_cell_updates(mode: DpMode, k: usize, l_tpr: usize, l_fpr: usize) -> u64 {
    let tri = |l: usize| ((l + 1) * (l + 2) / 2) as u64;
    let (lt, lf) = (l_tpr as u64, l_fpr as u64);
    let later = match mode {
        DpMode::Literal => tri(l_tpr) * tri(l_fpr),
        DpMode::Monotone => tri(l_tpr) * (lf + 1),
    };
    (lt + 1) * (lf + 1) + (k as u64 - 1) * later
}

pub fn build_table(group: &Group, grid: &Grid) -> DpTable {
    build_table_with(group, grid, DpMode::Monotone)
}

pub fn build_table_with(group: &Group, grid: &Grid, mode: DpMode) -> DpTable {
    let (lt, lf) = (grid.l_tpr, grid.l_fpr);
    let k = group.stages.len();
    let mut table = DpTable {
        k,
        l_tpr: lt,
        l_fpr: lf,
        cells: vec![false; k * (lt + 1) * (lf + 1)],
        parents: vec![NO_PARENT; k * (lt + 1) * (lf + 1)],
        cell_updates: 0,
    };
    for (i, &test) in group.stages.iter().enumerate() {
        // reach[j1]: largest j0 with a feasible (v(j1), v(j0)) stage step.
        let reach: Vec<Option<usize>> = (0..=lt)
            .map(|j1| {
                let a = grid.value(j1);
                (0..=lf)
                    .take_while(|&j0| stage_feasible(test, a, grid.value(j0)).is_some())
                    .last()
            })
            .collect();
        if i == 0 {
            for j1 in 0..=lt {
                for j0 in 0..=lf {
                    table.cell_updates += 1;
                    if reach[j1].is_some_and(|g| j0 <= g) {
                        let at = table.idx(0, j1, j0);
                        table.cells[at] = true;
                        table.parents[at] = (j1 as u32, j0 as u32);
                    }
                }
            }
            continue;
        }
        let top: Vec<Option<usize>> = (0..=lt).map(|r| table.max_fpr_index(i - 1, r)).collect();
        for t in 0..=lt {
            for f in 0..=lf {
                let found = match mode {
                    DpMode::Literal => {
                        let mut found = None;
                        for j0 in 0..=f {
                            for j1 in 0..=t {
                                table.cell_updates += 1;
                                if found.is_none()
                                    && reach[j1].is_some_and(|g| j0 <= g)
                                    && table.get(i - 1, t - j1, f - j0)
                                {
                                    found = Some((j1, j0));
                                }
                            }
                        }
                        found
                    }
                    DpMode::Monotone => {
                        let mut found: Option<(usize, usize)> = None;
                        for j1 in 0..=t {
                            table.cell_updates += 1;
                            let (Some(g), Some(top)) = (reach[j1], top[t - j1]) else {
                                continue;
                            };
                            let j0 = f.saturating_sub(top);
                            if j0 <= f.min(g) && found.is_none_or(|(b1, b0)| (j0, j1) < (b0, b1)) {
                                found = Some((j1, j0));
                            }
                        }
                        found
                    }
                };
                if let Some((j1, j0)) = found {
                    let at = table.idx(i, t, f);
                    table.cells[at] = true;
                    table.parents[at] = (j1 as u32, j0 as u32);
                }
            }
        }
    }
    table
}

/// Lower bounds on the final tpr and fpr of a near-optimal policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FptasBounds {
    pub lower_tpr: f64,
    pub lower_fpr: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEps(eps))
    }
}

pub fn eps_bar(pl: &Pipeline, eps: f64) -> f64 {
    eps / (2 * pl.k()) as f64
}

/// Bounds for maximizing `(1-alpha)·recall + alpha·precision`.
pub fn f_bounds(pl: &Pipeline, eps: f64) -> FptasBounds {
    let eb = eps_bar(pl, eps);
    let q = pl.q_total();
    let lower_tpr = (eps / (1.0 - eps)) * (1.0 - eb).powi(pl.k() as i32 - 1);
    let lower_fpr = if q >= 1.0 {
        1.0
    } else {
        (eps * eps * q / ((2.0 - eps) * (1.0 - eps) * (1.0 - q))).min(1.0)
    };
    FptasBounds {
        lower_tpr: lower_tpr.min(1.0),
        lower_fpr,
    }
}

/// Bounds for minimizing `(1-alpha)/recall + alpha/precision`.
pub fn g_bounds(pl: &Pipeline, eps: f64) -> FptasBounds {
    let eb = eps_bar(pl, eps);
    let q = pl.q_total();
    let tk = pl.tau1_min().powi(pl.k() as i32);
    let lower_fpr = if q >= 1.0 {
        1.0
    } else {
        (eps * q * tk / ((2.0 - eps) * (1.0 - q))).min(1.0)
    };
    FptasBounds {
        lower_tpr: tk * (1.0 - eb).powi(pl.k() as i32 - 1),
        lower_fpr,
    }
}

/// Scales stage 1 of every group down so all final tprs equal the smallest.
pub(crate) fn equalize_first_stage(pl: &Pipeline, rows: &mut [Vec<StagePolicy>]) {
    let tprs: Vec<f64> = pl
        .groups()
        .iter()
        .zip(rows.iter())
        .map(|(g, row)| {
            g.stages
                .iter()
                .zip(row)
                .map(|(&t, &p)| crate::model::stage_rates(t, p).0)
                .product()
        })
        .collect();
    let target = tprs.iter().copied().fold(f64::INFINITY, f64::min);
    for (row, tpr) in rows.iter_mut().zip(tprs) {
        if tpr > target {
            let c = target / tpr;
            row[0].pi1 *= c;
            row[0].pi0 *= c;
        }
    }
}

pub fn solve_fptas_f(pl: &Pipeline, alpha: f64, eps: f64) -> Result<SolverReport> {
    check_eps(eps)?;
    let objective = Objective::linear(alpha);
    objective.validate()?;
    pl.require_effective()?;
    if alpha <= eps || alpha >= 1.0 - eps {
        let started = Instant::now();
        let (chosen, policy) = if alpha <= eps {
            (Source::Bypass, Policy::bypass(pl))
        } else {
            (Source::Ratio, opportunity_ratio(pl, RatioPolicyKind::FirstStage)?)
        };
        return SolverReport::assemble(
            Method::Fptas,
            pl,
            &objective,
            Some(eps),
            policy,
            Certificate::Fptas {
                chosen,
                eps_bar: eps_bar(pl, eps),
                l_tpr: 0,
                l_fpr: 0,
                tpr_index: None,
                fpr_indices: None,
            },
            Diagnostics {
                candidates_scored: 1,
                ..Default::default()
            },
            started,
        );
    }
    run(pl, &objective, eps, f_bounds(pl, eps), DpMode::Monotone)
}

pub fn solve_fptas_g(pl: &Pipeline, alpha: f64, eps: f64) -> Result<SolverReport> {
    check_eps(eps)?;
    let objective = Objective::reciprocal(alpha);
    objective.validate()?;
    pl.require_effective()?;
    run(pl, &objective, eps, g_bounds(pl, eps), DpMode::Monotone)
}

/// The DP with caller-supplied bounds and any monotone objective.
pub fn solve_fptas_custom(pl: &Pipeline, objective: &Objective, eps: f64, bounds: FptasBounds) -> Result<SolverReport> {
    check_eps(eps)?;
    objective.validate()?;
    pl.require_effective()?;
    run(pl, objective, eps, bounds, DpMode::Monotone)
}

/// As [`solve_fptas_custom`] with an explicit scan mode.
pub fn solve_fptas_with_mode(
    pl: &Pipeline,
    objective: &Objective,
    eps: f64,
    bounds: FptasBounds,
    mode: DpMode,
) -> Result<SolverReport> {
    check_eps(eps)?;
    objective.validate()?;
    pl.require_effective()?;
    run(pl, objective, eps, bounds, mode)
}

fn run(pl: &Pipeline, objective: &Objective, eps: f64, bounds: FptasBounds, mode: DpMode) -> Result<SolverReport> {
    let started = Instant::now();
    let grid = Grid::new(eps_bar(pl, eps), bounds.lower_tpr, bounds.lower_fpr)?;
    let tables: Vec<DpTable> = pl
        .groups()
        .par_iter()
        .map(|g| build_table_with(g, &grid, mode))
        .collect();
    let mut diagnostics = Diagnostics {
        dp_cells: tables.iter().map(DpTable::cell_count).sum(),
        cell_updates: tables.iter().map(|t| t.cell_updates).sum(),
        ..Default::default()
    };
    let k = pl.k();

    let mut best: Option<(f64, Policy, Source, Option<(usize, Vec<usize>)>)> = None;
    let mut consider = |score: f64, policy: Policy, src, idx| {
        if best.as_ref().is_none_or(|b| objective.better(score, b.0)) {
            best = Some((score, policy, src, idx));
        }
    };
    for j1 in 0..=grid.l_tpr {
        let Some(j0s) = tables
            .iter()
            .map(|t| t.max_fpr_index(k - 1, j1))
            .collect::<Option<Vec<usize>>>()
        else {
            continue;
        };
        let mut rows: Vec<Vec<StagePolicy>> = pl
            .groups()
            .iter()
            .zip(&tables)
            .zip(&j0s)
            .map(|((g, t), &j0)| t.reconstruct(g, &grid, j1, j0).expect("true cell has a parent chain"))
            .collect();
        equalize_first_stage(pl, &mut rows);
        let policy = Policy::from_rows(pl, rows)?;
        let ev = evaluate(pl, &policy)?;
        diagnostics.candidates_scored += 1;
        consider(objective.score(ev.recall, ev.precision), policy, Source::Dp, Some((j1, j0s)));
    }
    for (src, policy) in [
        (Source::Bypass, Policy::bypass(pl)),
        (Source::Ratio, opportunity_ratio(pl, RatioPolicyKind::FirstStage)?),
    ] {
        let ev = evaluate(pl, &policy)?;
        diagnostics.candidates_scored += 1;
        consider(objective.score(ev.recall, ev.precision), policy, src, None);
    }
    let (_, policy, chosen, idx) = best.expect("boundary candidates always exist");
    let (tpr_index, fpr_indices) = match idx {
        Some((j1, j0s)) => (Some(j1), Some(j0s)),
        None => (None, None),
    };
    SolverReport::assemble(
        Method::Fptas,
        pl,
        objective,
        Some(eps),
        policy,
        Certificate::Fptas {
            chosen,
            eps_bar: grid.eps_bar,
            l_tpr: grid.l_tpr,
            l_fpr: grid.l_fpr,
            tpr_index,
            fpr_indices,
        },
        diagnostics,
        started,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(a: f64, b: f64) -> TestStats {
        TestStats::weak(a, b).unwrap()
    }

    #[test]
    fn stage_feasibility_examples() {
        assert_eq!(stage_feasible(t(1.0, 0.0), 1.0, 0.0), Some((1.0, 0.0)));
        assert_eq!(stage_feasible(t(0.5, 0.5), 0.9, 0.5), None);
        assert_eq!(stage_feasible(t(0.75, 0.25), 0.75, 0.25), Some((1.0, 0.0)));
        assert_eq!(stage_feasible(t(0.75, 0.25), 0.75, 0.2), None);
    }

    #[test]
    fn grid_indices() {
        let g = Grid::new(0.1, 0.5, 1.0).unwrap();
        assert_eq!(g.l_fpr, 0);
        assert_eq!(g.l_tpr, 7);
        assert!(g.value(g.l_tpr) <= 0.5 && g.value(g.l_tpr - 1) > 0.5);
        assert!(Grid::new(0.1, 0.0, 1.0).is_err());
        assert!(Grid::new(1.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn perfect_test_table_is_full() {
        let g = Group::new("A", 0.5, 0.5, vec![t(1.0, 0.0)]);
        let grid = Grid::new(0.05, 0.1, 0.01).unwrap();
        let tab = build_table(&g, &grid);
        for j1 in 0..=grid.l_tpr {
            for j0 in 0..=grid.l_fpr {
                assert!(tab.get(0, j1, j0));
            }
        }
    }

    #[test]
    fn symmetric_test_table() {
        let g = Group::new("A", 0.5, 0.5, vec![t(0.5, 0.5)]);
        let grid = Grid::new(0.05, 0.2, 0.2).unwrap();
        let tab = build_table(&g, &grid);
        for j1 in 0..=grid.l_tpr {
            for j0 in 0..=grid.l_fpr {
                assert_eq!(tab.get(0, j1, j0), j1 >= j0, "({j1},{j0})");
            }
        }
    }

    #[test]
    fn modes_agree_and_counts_match() {
        let g = Group::new("A", 0.3, 0.2, vec![t(0.8, 0.3), t(0.6, 0.1), t(0.9, 0.5)]);
        let grid = Grid::new(0.05, 0.2, 0.05).unwrap();
        let a = build_table_with(&g, &grid, DpMode::Literal);
        let b = build_table_with(&g, &grid, DpMode::Monotone);
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.parents, b.parents);
        assert_eq!(a.cell_updates, expected_cell_updates(DpMode::Literal, 3, grid.l_tpr, grid.l_fpr));
        assert_eq!(b.cell_updates, expected_cell_updates(DpMode::Monotone, 3, grid.l_tpr, grid.l_fpr));
    }

    #[test]
    fn reconstruction_reaches_grid_values() {
        let g = Group::new("A", 0.3, 0.2, vec![t(0.8, 0.3), t(0.6, 0.1)]);
        let grid = Grid::new(0.05, 0.1, 0.01).unwrap();
        let tab = build_table(&g, &grid);
        for j1 in 0..=grid.l_tpr {
            if let Some(j0) = tab.max_fpr_index(1, j1) {
                let row = tab.reconstruct(&g, &grid, j1, j0).unwrap();
                let (m, n) = g.stages.iter().zip(&row).fold((1.0, 1.0), |acc, (&s, &p)| {
                    let (m, n) = crate::model::stage_rates(s, p);
                    (acc.0 * m, acc.1 * n)
                });
                assert!(m >= grid.value(j1) * (1.0 - 1e-12));
                assert!(n <= grid.value(j0) + 1e-9);
            }
        }
    }

    #[test]
    fn invalid_eps() {
        let pl = Pipeline::new(vec![Group::new("A", 0.5, 0.5, vec![t(0.9, 0.1)])]).unwrap();
        assert!(matches!(solve_fptas_f(&pl, 0.5, 0.0), Err(Error::InvalidEps(_))));
        assert!(matches!(solve_fptas_g(&pl, 0.5, 1.0), Err(Error::InvalidEps(_))));
    }
}
