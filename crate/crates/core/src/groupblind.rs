//! Group-blind Equal Opportunity: one shared `(pi1, pi0)` per stage.
//!
//! The DP state is a tuple of per-group tpr band indices and a set of
//! Pareto-maximal fpr index tuples. A stage step with tpr index `d` keeps
//! that group's stage factor in `[v(d), v(d-1)]` (`d = 0` means exactly 1),
//! so groups finishing on the same index have tprs within `(1-eps_bar)^k`
//! of each other.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fairness::{check_eo, Scope};
use crate::fptas::{eps_bar, f_bounds, g_bounds, Grid};
use crate::model::{Pipeline, Policy, StagePolicy, TestStats};
use crate::objective::Objective;
use crate::report::{Certificate, Diagnostics, Method, Source, SolverReport};

pub const DEFAULT_STATE_BUDGET: u64 = 100_000_000;

const LP_TOL: f64 = 1e-12;

/// `a·x + b·y <= c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HalfPlane {
    fn holds(&self, x: f64, y: f64) -> bool {
        self.a * x + self.b * y <= self.c + LP_TOL * (1.0 + self.c.abs())
    }
}

const UNIT_BOX: [HalfPlane; 4] = [
    HalfPlane { a: -1.0, b: 0.0, c: 0.0 },
    HalfPlane { a: 1.0, b: 0.0, c: 1.0 },
    HalfPlane { a: 0.0, b: -1.0, c: 0.0 },
    HalfPlane { a: 0.0, b: 1.0, c: 1.0 },
];

/// Minimizes `cost·(x, y)` over the unit box intersected with `cons` by
/// checking every pairwise intersection of boundary lines.
pub fn minimize_linear(cons: &[HalfPlane], cost: (f64, f64)) -> Option<(f64, f64)> {
    let all: Vec<HalfPlane> = UNIT_BOX.iter().chain(cons).copied().collect();
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let (p, q) = (all[i], all[j]);
            let det = p.a * q.b - p.b * q.a;
            if det.abs() < 1e-15 {
                continue;
            }
            let x = (p.c * q.b - p.b * q.c) / det;
            let y = (p.a * q.c - p.c * q.a) / det;
            if !all.iter().all(|h| h.holds(x, y)) {
                continue;
            }
            let (x, y) = (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0));
            let v = cost.0 * x + cost.1 * y;
            if best.is_none_or(|b| v < b.2 - 1e-15) {
                best = Some((x, y, v));
            }
        }
    }
    best.map(|(x, y, _)| (x, y))
}

fn tpr_at_least(t: TestStats, a: f64) -> HalfPlane {
    HalfPlane {
        a: -t.tau1,
        b: -(1.0 - t.tau1),
        c: -a,
    }
}

fn tpr_at_most(t: TestStats, a: f64) -> HalfPlane {
    HalfPlane {
        a: t.tau1,
        b: 1.0 - t.tau1,
        c: a,
    }
}

fn fpr_at_most(t: TestStats, b: f64) -> HalfPlane {
    HalfPlane {
        a: t.tau0,
        b: 1.0 - t.tau0,
        c: b,
    }
}

fn total_fpr(tests: &[TestStats]) -> (f64, f64) {
    tests
        .iter()
        .fold((0.0, 0.0), |acc, t| (acc.0 + t.tau0, acc.1 + 1.0 - t.tau0))
}

/// A single `(x, y)` meeting every group's tpr lower bound `a[X]` and fpr
/// upper bound `b[X]`. Among feasible points the one with the smallest total
/// fpr factor is returned.
pub fn joint_stage_feasible(tests: &[TestStats], a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    let cons: Vec<HalfPlane> = tests
        .iter()
        .zip(a)
        .zip(b)
        .flat_map(|((&t, &a), &b)| [tpr_at_least(t, a), fpr_at_most(t, b)])
        .collect();
    minimize_linear(&cons, total_fpr(tests))
}

#[derive(Debug, Clone, Copy)]
pub struct GroupBlindOptions {
    /// Cap on `k · (l_tpr+1)^|X| · (l_fpr+1)^|X|`.
    pub state_budget: u64,
}

impl Default for GroupBlindOptions {
    fn default() -> Self {
        Self {
            state_budget: DEFAULT_STATE_BUDGET,
        }
    }
}

/// A reachable fpr tuple with the shared stage policy that produced it.
#[derive(Debug, Clone)]
struct Entry {
    fpr: Vec<u16>,
    prev: Option<u32>,
    step: StagePolicy,
}

/// A stage step: band indices, the achievable fpr antichain and witnesses.
struct Step {
    tpr: Vec<u16>,
    fronts: Vec<(Vec<u16>, StagePolicy)>,
}

fn fpr_index(grid: &Grid, n: f64) -> u16 {
    let lf = grid.l_fpr;
    if n <= grid.value(lf) * (1.0 + 1e-12) {
        return lf as u16;
    }
    let mut j = ((n.ln() / (1.0 - grid.eps_bar).ln()).floor().max(0.0) as usize).min(lf);
    while j < lf && grid.value(j + 1) >= n * (1.0 - 1e-12) {
        j += 1;
    }
    while j > 0 && grid.value(j) < n * (1.0 - 1e-12) {
        j -= 1;
    }
    j as u16
}

/// Keeps fpr tuples not weakly dominated (componentwise `<=`) by another.
fn pareto<T>(mut items: Vec<(Vec<u16>, T)>) -> Vec<(Vec<u16>, T)> {
    items.sort_by(|a, b| b.0.cmp(&a.0));
    let mut kept: Vec<(Vec<u16>, T)> = Vec::new();
    for it in items {
        if !kept.iter().any(|k| k.0.iter().zip(&it.0).all(|(a, b)| a >= b)) {
            kept.push(it);
        }
    }
    kept
}

fn band(t: TestStats, grid: &Grid, d: usize) -> [HalfPlane; 2] {
    let hi = if d == 0 { 1.0 } else { grid.value(d - 1) };
    [tpr_at_least(t, grid.value(d)), tpr_at_most(t, hi)]
}

/// Pareto-maximal fpr tuples achievable inside the band polygon `base`.
fn fronts(tests: &[TestStats], grid: &Grid, base: &[HalfPlane]) -> Vec<(Vec<u16>, StagePolicy)> {
    let n = tests.len();
    let mut out = Vec::new();
    let mut cons = base.to_vec();
    let mut prefix = Vec::with_capacity(n);
    fn rec(
        tests: &[TestStats],
        grid: &Grid,
        cons: &mut Vec<HalfPlane>,
        prefix: &mut Vec<u16>,
        out: &mut Vec<(Vec<u16>, StagePolicy)>,
    ) {
        let x = prefix.len();
        let last = tests[x];
        if x + 1 == tests.len() {
            if let Some((px, py)) = minimize_linear(cons, (last.tau0, 1.0 - last.tau0)) {
                let j = fpr_index(grid, last.tau0 * px + (1.0 - last.tau0) * py);
                let mut tuple = prefix.clone();
                tuple.push(j);
                out.push((tuple, StagePolicy { pi1: px, pi0: py }));
            }
            return;
        }
        for j in 0..=grid.l_fpr {
            cons.push(fpr_at_most(last, grid.value(j)));
            let feasible = minimize_linear(cons, (0.0, 0.0)).is_some();
            if feasible {
                prefix.push(j as u16);
                rec(tests, grid, cons, prefix, out);
                prefix.pop();
            }
            cons.pop();
            if !feasible {
                break;
            }
        }
    }
    rec(tests, grid, &mut cons, &mut prefix, &mut out);
    pareto(out)
}

fn stage_steps(tests: &[TestStats], grid: &Grid) -> Vec<Step> {
    let n = tests.len();
    let lt = grid.l_tpr;
    let mut steps = Vec::new();
    let mut d = vec![0usize; n];
    loop {
        let base: Vec<HalfPlane> = tests
            .iter()
            .zip(&d)
            .flat_map(|(&t, &di)| band(t, grid, di))
            .collect();
        if minimize_linear(&base, (0.0, 0.0)).is_some() {
            let fr = fronts(tests, grid, &base);
            if !fr.is_empty() {
                steps.push(Step {
                    tpr: d.iter().map(|&v| v as u16).collect(),
                    fronts: fr,
                });
            }
        }
        // Odometer over band index tuples, last group fastest.
        let mut x = n;
        loop {
            if x == 0 {
                return steps;
            }
            x -= 1;
            if d[x] < lt {
                d[x] += 1;
                break;
            }
            d[x] = 0;
        }
    }
}

pub fn solve_groupblind(pl: &Pipeline, objective: &Objective, eps: f64) -> Result<SolverReport> {
    solve_groupblind_with(pl, objective, eps, &GroupBlindOptions::default())
}

pub fn solve_groupblind_with(
    pl: &Pipeline,
    objective: &Objective,
    eps: f64,
    opts: &GroupBlindOptions,
) -> Result<SolverReport> {
    let started = Instant::now();
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidEps(eps));
    }
    objective.validate()?;
    pl.require_effective()?;
    let bounds = match objective {
        Objective::Linear { .. } => f_bounds(pl, eps),
        Objective::Reciprocal { .. } => g_bounds(pl, eps),
        Objective::Custom(_) => {
            return Err(Error::IncompatibleObjective {
                objective: objective.label(),
                solver: "groupblind",
            })
        }
    };
    let grid = Grid::new(eps_bar(pl, eps), bounds.lower_tpr, bounds.lower_fpr)?;
    let n = pl.len();
    let k = pl.k();
    let states = k as f64 * ((grid.l_tpr + 1) as f64).powi(n as i32) * ((grid.l_fpr + 1) as f64).powi(n as i32);
    if states > opts.state_budget as f64 {
        return Err(Error::SizeLimit {
            what: "group-blind state space",
            required: states,
            budget: opts.state_budget,
        });
    }
    let lt = grid.l_tpr as u16;
    let lf = grid.l_fpr as u16;
    let mut diagnostics = Diagnostics {
        dp_cells: states as u64,
        ..Default::default()
    };

    // layers[i]: tpr tuple -> entries; arena[i] holds the entries by index.
    let mut arenas: Vec<Vec<Entry>> = Vec::with_capacity(k);
    let mut layer: BTreeMap<Vec<u16>, Vec<u32>> = BTreeMap::new();
    for i in 0..k {
        let tests: Vec<TestStats> = pl.groups().iter().map(|g| g.stages[i]).collect();
        let steps = stage_steps(&tests, &grid);
        let mut buckets: BTreeMap<Vec<u16>, Vec<(Vec<u16>, (Option<u32>, StagePolicy))>> = BTreeMap::new();
        if i == 0 {
            for s in &steps {
                let b = buckets.entry(s.tpr.clone()).or_default();
                for (f, sp) in &s.fronts {
                    diagnostics.cell_updates += 1;
                    b.push((f.clone(), (None, *sp)));
                }
            }
        } else {
            let prev = &arenas[i - 1];
            for (t, ids) in &layer {
                for s in &steps {
                    let Some(nt) = t
                        .iter()
                        .zip(&s.tpr)
                        .map(|(&a, &b)| (a + b <= lt).then_some(a + b))
                        .collect::<Option<Vec<u16>>>()
                    else {
                        continue;
                    };
                    let b = buckets.entry(nt).or_default();
                    for &id in ids {
                        let e = &prev[id as usize];
                        for (f, sp) in &s.fronts {
                            diagnostics.cell_updates += 1;
                            let nf = e.fpr.iter().zip(f).map(|(&a, &b)| (a + b).min(lf)).collect();
                            b.push((nf, (Some(id), *sp)));
                        }
                    }
                }
            }
        }
        let mut arena = Vec::new();
        layer = BTreeMap::new();
        for (t, items) in buckets {
            let ids = pareto(items)
                .into_iter()
                .map(|(fpr, (prev, step))| {
                    arena.push(Entry { fpr, prev, step });
                    (arena.len() - 1) as u32
                })
                .collect();
            layer.insert(t, ids);
        }
        arenas.push(arena);
    }

    // Certified value: tpr at least v(J) for every group, fpr at most v(j0).
    let q = pl.q_total();
    let mut best: Option<(f64, usize, u32)> = None;
    for (t, ids) in &layer {
        let j = t[0] as usize;
        if t.iter().any(|&v| v as usize != j) {
            continue;
        }
        let tv = grid.value(j);
        for &id in ids {
            let e = &arenas[k - 1][id as usize];
            let fp: f64 = pl
                .groups()
                .iter()
                .zip(&e.fpr)
                .map(|(g, &f)| g.u * grid.value(f as usize))
                .sum();
            let prec = q * tv / (q * tv + fp);
            let s = objective.score(tv, Some(prec));
            diagnostics.candidates_scored += 1;
            if best.is_none_or(|b| objective.better(s, b.0)) {
                best = Some((s, j, id));
            }
        }
    }
    let (certified, j, mut id) = best.ok_or_else(|| Error::InvalidParams("no equal-index state reached".into()))?;
    let fpr_indices: Vec<usize> = arenas[k - 1][id as usize].fpr.iter().map(|&v| v as usize).collect();
    let mut stages = vec![StagePolicy::REJECT; k];
    for i in (0..k).rev() {
        let e = &arenas[i][id as usize];
        stages[i] = e.step;
        if let Some(p) = e.prev {
            id = p;
        }
    }
    let chosen = if stages.iter().all(|s| s.pi1 == s.pi0) {
        Source::Bypass
    } else {
        Source::Dp
    };
    let policy = Policy::shared(pl, stages)?;
    let residual_gap = check_eo(pl, &policy, 0.0, Scope::Final)?.max_gap;
    let mut report = SolverReport::assemble(
        Method::Groupblind,
        pl,
        objective,
        Some(eps),
        policy,
        Certificate::Groupblind {
            chosen,
            eps_bar: grid.eps_bar,
            l_tpr: grid.l_tpr,
            l_fpr: grid.l_fpr,
            tpr_index: Some(j),
            fpr_indices: Some(fpr_indices),
            evaluated_score: 0.0,
            residual_gap,
        },
        diagnostics,
        started,
    )?;
    if let Certificate::Groupblind { evaluated_score, .. } = &mut report.certificate {
        *evaluated_score = report.score;
    }
    report.score = certified;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(a: f64, b: f64) -> TestStats {
        TestStats::new(a, b).unwrap()
    }

    #[test]
    fn joint_feasibility_examples() {
        let tests = [t(1.0, 0.0), t(0.5, 0.0)];
        let (x, y) = joint_stage_feasible(&tests, &[0.9, 0.9], &[1.0, 1.0]).unwrap();
        assert!(x >= 0.9 - 1e-12 && 0.5 * x + 0.5 * y >= 0.9 - 1e-12);
        assert!((y - 0.8).abs() < 1e-12);
        assert!(joint_stage_feasible(&tests, &[0.9, 0.9], &[0.5, 0.5]).is_none());
    }

    #[test]
    fn identical_groups_reduce_to_single_stage_feasibility() {
        let s = t(0.75, 0.25);
        for (a, b) in [(0.75, 0.25), (0.75, 0.2), (0.5, 0.1), (0.9, 0.5)] {
            let joint = joint_stage_feasible(&[s, s], &[a, a], &[b, b]).is_some();
            assert_eq!(joint, crate::fptas::stage_feasible(s, a, b).is_some(), "({a},{b})");
        }
    }

    #[test]
    fn pareto_filter() {
        let items = vec![(vec![1, 2], 0), (vec![2, 1], 1), (vec![1, 1], 2), (vec![2, 1], 3)];
        let kept: Vec<_> = pareto(items).into_iter().map(|(f, _)| f).collect();
        assert_eq!(kept, vec![vec![2, 1], vec![1, 2]]);
    }

    #[test]
    fn fpr_index_rounds_down_in_value() {
        let g = Grid::new(0.1, 0.5, 0.01).unwrap();
        for j in 0..g.l_fpr {
            assert_eq!(fpr_index(&g, g.value(j)) as usize, j);
            assert_eq!(fpr_index(&g, g.value(j) * 0.99) as usize, j);
        }
        assert_eq!(fpr_index(&g, 0.0) as usize, g.l_fpr);
    }
}
