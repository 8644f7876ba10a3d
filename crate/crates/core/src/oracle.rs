//! Slow, independent verifiers: grid search over policy parameters, a
//! dense-scan variant of the structural enumeration, and Monte Carlo
//! simulation of the screening process.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{config_at, config_count, utility_key, Candidate, Configuration, Level, DEFAULT_CONFIG_BUDGET};
use crate::model::{stage_rates, summarize, Pipeline, Policy, StagePolicy};
use crate::objective::Objective;
use crate::report::{Certificate, Diagnostics, Method, SolverReport};

pub const DEFAULT_GRID_BUDGET: u64 = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    Eo,
    Eodds,
    None,
}

/// Policy parameters range over `{0, 1/g, ..., 1}`. Grid policies whose
/// constrained rates differ by at most `eo_tolerance` are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub steps: u32,
    pub eo_tolerance: f64,
    /// Cap on per-group grid size and on accepted policies.
    pub budget: u64,
}

impl GridSpec {
    pub fn new(steps: u32, eo_tolerance: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidParams(format!("grid needs g >= 2, got {steps}")));
        }
        if !(eo_tolerance >= 0.0) {
            return Err(Error::InvalidParams(format!("negative tolerance {eo_tolerance}")));
        }
        Ok(Self {
            steps,
            eo_tolerance,
            budget: DEFAULT_GRID_BUDGET,
        })
    }
}

/// One grid policy of one group.
#[derive(Debug, Clone, Copy)]
struct Point {
    tpr: f64,
    fpr: f64,
    code: u64,
}

fn decode_row(code: u64, k: usize, g: u32) -> Vec<StagePolicy> {
    let base = g as u64 + 1;
    let mut c = code;
    let mut digits = vec![0u64; 2 * k];
    for d in digits.iter_mut().rev() {
        *d = c % base;
        c /= base;
    }
    (0..k)
        .map(|i| StagePolicy {
            pi1: digits[2 * i] as f64 / g as f64,
            pi0: digits[2 * i + 1] as f64 / g as f64,
        })
        .collect()
}

fn group_points(pl: &Pipeline, x: usize, spec: &GridSpec) -> Result<Vec<Point>> {
    let k = pl.k();
    let size = ((spec.steps + 1) as f64).powi(2 * k as i32);
    if size > spec.budget as f64 {
        return Err(Error::SizeLimit {
            what: "per-group grid size",
            required: size,
            budget: spec.budget,
        });
    }
    let g = &pl.groups()[x];
    let mut pts: Vec<Point> = (0..size as u64)
        .map(|code| {
            let row = decode_row(code, k, spec.steps);
            let (tpr, fpr) = g.stages.iter().zip(&row).fold((1.0, 1.0), |acc, (&t, &p)| {
                let (m, n) = stage_rates(t, p);
                (acc.0 * m, acc.1 * n)
            });
            Point { tpr, fpr, code }
        })
        .collect();
    pts.sort_by(|a, b| a.tpr.total_cmp(&b.tpr).then(a.code.cmp(&b.code)));
    Ok(pts)
}

struct Search<'a> {
    pl: &'a Pipeline,
    lists: Vec<Vec<Point>>,
    constraint: Constraint,
    tol: f64,
}

impl Search<'_> {
    /// Visits every accepted combination extending `chosen`.
    fn walk(&self, chosen: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        let x = chosen.len();
        if x == self.lists.len() {
            return visit(chosen);
        }
        let list = &self.lists[x];
        let (lo, hi) = if x == 0 || self.constraint == Constraint::None {
            (0, list.len())
        } else {
            let (tmin, tmax) = chosen.iter().enumerate().fold((f64::INFINITY, f64::NEG_INFINITY), |a, (y, &i)| {
                let t = self.lists[y][i].tpr;
                (a.0.min(t), a.1.max(t))
            });
            (
                list.partition_point(|p| p.tpr < tmax - self.tol),
                list.partition_point(|p| p.tpr <= tmin + self.tol),
            )
        };
        for i in lo..hi {
            if self.constraint == Constraint::Eodds && x > 0 {
                let f = list[i].fpr;
                let ok = chosen
                    .iter()
                    .enumerate()
                    .all(|(y, &j)| (self.lists[y][j].fpr - f).abs() <= self.tol);
                if !ok {
                    continue;
                }
            }
            chosen.push(i);
            let go = self.walk(chosen, visit);
            chosen.pop();
            if !go {
                return false;
            }
        }
        true
    }

    fn rates(&self, chosen: &[usize]) -> Vec<(f64, f64)> {
        chosen
            .iter()
            .enumerate()
            .map(|(y, &i)| (self.lists[y][i].tpr, self.lists[y][i].fpr))
            .collect()
    }

    fn policy(&self, chosen: &[usize], steps: u32) -> Policy {
        let rows = chosen
            .iter()
            .enumerate()
            .map(|(y, &i)| decode_row(self.lists[y][i].code, self.pl.k(), steps))
            .collect();
        Policy::from_rows(self.pl, rows).expect("grid rows match the pipeline")
    }
}

fn prepare<'a>(pl: &'a Pipeline, spec: &GridSpec, constraint: Constraint) -> Result<Search<'a>> {
    if constraint == Constraint::None {
        let total = ((spec.steps + 1) as f64).powi((2 * pl.k() * pl.len()) as i32);
        if total > spec.budget as f64 {
            return Err(Error::SizeLimit {
                what: "unconstrained grid size",
                required: total,
                budget: spec.budget,
            });
        }
    }
    let lists = (0..pl.len())
        .map(|x| group_points(pl, x, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(Search {
        pl,
        lists,
        constraint,
        tol: spec.eo_tolerance,
    })
}

/// Every accepted grid policy, in enumeration order.
pub fn feasible_grid_policies(pl: &Pipeline, spec: &GridSpec, constraint: Constraint) -> Result<Vec<Policy>> {
    let search = prepare(pl, spec, constraint)?;
    let mut out = Vec::new();
    let mut over = false;
    search.walk(&mut Vec::new(), &mut |chosen| {
        if out.len() as u64 >= spec.budget {
            over = true;
            return false;
        }
        out.push(search.policy(chosen, spec.steps));
        true
    });
    if over {
        return Err(Error::SizeLimit {
            what: "accepted grid policies",
            required: spec.budget as f64 + 1.0,
            budget: spec.budget,
        });
    }
    Ok(out)
}

#[derive(Clone)]
struct Leaf {
    key: i128,
    recall: f64,
    codes: Vec<u64>,
    chosen: Vec<usize>,
}

impl Leaf {
    fn beats(&self, o: &Leaf) -> bool {
        (self.key, self.recall) > (o.key, o.recall)
            || ((self.key, self.recall) == (o.key, o.recall) && self.codes < o.codes)
    }
}

fn pick(a: Option<Leaf>, b: Option<Leaf>) -> Option<Leaf> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if b.beats(&a) { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    }
}

/// The best accepted grid policy. Ties prefer higher recall, then the
/// lexicographically smallest grid codes.
pub fn grid_search(pl: &Pipeline, objective: &Objective, spec: &GridSpec, constraint: Constraint) -> Result<SolverReport> {
    let started = Instant::now();
    objective.validate()?;
    let search = prepare(pl, spec, constraint)?;
    let (best, accepted) = (0..search.lists[0].len())
        .into_par_iter()
        .map(|first| {
            let mut best: Option<Leaf> = None;
            let mut count = 0u64;
            search.walk(&mut vec![first], &mut |chosen| {
                count += 1;
                if count > spec.budget {
                    return false;
                }
                let (recall, precision) = summarize(pl, &search.rates(chosen));
                let score = objective.score(recall, precision);
                let leaf = Leaf {
                    key: utility_key(objective, score),
                    recall,
                    codes: chosen
                        .iter()
                        .enumerate()
                        .map(|(y, &i)| search.lists[y][i].code)
                        .collect(),
                    chosen: chosen.to_vec(),
                };
                if best.as_ref().is_none_or(|b| leaf.beats(b)) {
                    best = Some(leaf);
                }
                true
            });
            (best, count)
        })
        .reduce(|| (None, 0), |a, b| (pick(a.0, b.0), a.1 + b.1));
    if accepted > spec.budget {
        return Err(Error::SizeLimit {
            what: "accepted grid policies",
            required: accepted as f64,
            budget: spec.budget,
        });
    }
    let best = best.ok_or_else(|| Error::InvalidParams("no grid policy meets the constraint".into()))?;
    let policy = search.policy(&best.chosen, spec.steps);
    SolverReport::assemble(
        Method::Oracle,
        pl,
        objective,
        None,
        policy,
        Certificate::Grid {
            steps: spec.steps,
            tolerance: spec.eo_tolerance,
            constraint,
            accepted,
        },
        Diagnostics {
            candidates_scored: accepted,
            ..Default::default()
        },
        started,
    )
}

/// Stage policies of one group with partial parameter `theta`.
fn structured_row(levels: &[Level], theta: f64) -> Vec<StagePolicy> {
    levels
        .iter()
        .map(|l| match l {
            Level::FullUse => StagePolicy::FULL_USE,
            Level::Bypass => StagePolicy::BYPASS,
            Level::PassFraction => StagePolicy { pi1: theta, pi0: 0.0 },
            Level::FailFraction => StagePolicy { pi1: 1.0, pi0: theta },
        })
        .collect()
}

fn row_rates(pl: &Pipeline, x: usize, row: &[StagePolicy]) -> (f64, f64) {
    pl.groups()[x]
        .stages
        .iter()
        .zip(row)
        .fold((1.0, 1.0), |acc, (&t, &p)| {
            let (m, n) = stage_rates(t, p);
            (acc.0 * m, acc.1 * n)
        })
}

/// Per group, the partial parameter giving tpr `t` (tpr is affine in it).
fn thetas_for(ends: &[(f64, f64)], t: f64) -> Vec<f64> {
    ends.iter()
        .map(|&(t0, t1)| {
            if t1 - t0 <= 0.0 {
                0.0
            } else {
                ((t - t0) / (t1 - t0)).clamp(0.0, 1.0)
            }
        })
        .collect()
}

type ConfigFilter<'a> = &'a (dyn Fn(&Configuration) -> bool + Sync);

/// Same configurations as the exact solver, but each inner problem is
/// solved by scanning `t_resolution` evenly spaced common tpr values and
/// evaluating the stage rates directly.
pub fn structured_grid_search(pl: &Pipeline, objective: &Objective, t_resolution: usize) -> Result<SolverReport> {
    structured_grid_search_with(pl, objective, t_resolution, DEFAULT_CONFIG_BUDGET, None)
}

pub fn structured_grid_search_with(
    pl: &Pipeline,
    objective: &Objective,
    t_resolution: usize,
    budget: u64,
    filter: Option<ConfigFilter>,
) -> Result<SolverReport> {
    let started = Instant::now();
    objective.validate()?;
    pl.require_effective()?;
    let n = config_count(pl);
    if n > budget as f64 {
        return Err(Error::SizeLimit {
            what: "configuration count",
            required: n,
            budget,
        });
    }
    let res = t_resolution.max(2);
    let (best, feasible) = (0..n as u64)
        .into_par_iter()
        .map(|index| {
            let cfg = config_at(pl, index);
            if filter.is_some_and(|f| !f(&cfg)) {
                return (None, 0u64);
            }
            let ends: Vec<(f64, f64)> = cfg
                .groups
                .iter()
                .enumerate()
                .map(|(x, gc)| {
                    (
                        row_rates(pl, x, &structured_row(&gc.levels, 0.0)).0,
                        row_rates(pl, x, &structured_row(&gc.levels, 1.0)).0,
                    )
                })
                .collect();
            let lo = cfg
                .groups
                .iter()
                .zip(&ends)
                .map(|(gc, e)| if gc.partial_type() == Level::PassFraction { 0.0 } else { e.0 })
                .fold(0.0, f64::max);
            let hi = ends.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
            if hi <= 0.0 || lo > hi * (1.0 + 1e-12) {
                return (None, 0);
            }
            let lo = lo.min(hi);
            let mut best: Option<Candidate> = None;
            for j in 0..res {
                let t = lo + (hi - lo) * j as f64 / (res - 1) as f64;
                if t <= 0.0 {
                    continue;
                }
                let thetas = thetas_for(&ends, t);
                let rates: Vec<(f64, f64)> = cfg
                    .groups
                    .iter()
                    .zip(&thetas)
                    .enumerate()
                    .map(|(x, (gc, &th))| row_rates(pl, x, &structured_row(&gc.levels, th)))
                    .collect();
                let common = rates.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
                let (_, precision) = summarize(pl, &rates);
                let c = Candidate::new(objective, index, common, objective.score(common, precision));
                best = Candidate::pick(best, Some(c));
            }
            (best, 1)
        })
        .reduce(|| (None, 0), |a, b| (Candidate::pick(a.0, b.0), a.1 + b.1));
    let best = best.ok_or_else(|| Error::InvalidParams("no configuration passes the filter".into()))?;
    let configuration = config_at(pl, best.index);
    let ends: Vec<(f64, f64)> = configuration
        .groups
        .iter()
        .enumerate()
        .map(|(x, gc)| {
            (
                row_rates(pl, x, &structured_row(&gc.levels, 0.0)).0,
                row_rates(pl, x, &structured_row(&gc.levels, 1.0)).0,
            )
        })
        .collect();
    let thetas = thetas_for(&ends, best.t);
    let rows = configuration
        .groups
        .iter()
        .zip(&thetas)
        .map(|(gc, &th)| structured_row(&gc.levels, th))
        .collect();
    let policy = Policy::from_rows(pl, rows)?;
    SolverReport::assemble(
        Method::StructuredOracle,
        pl,
        objective,
        None,
        policy,
        Certificate::Structured {
            configuration_index: best.index,
            configuration,
            t_star: best.t,
            t_resolution: res,
        },
        Diagnostics {
            configs_enumerated: n as u64,
            configs_feasible: feasible,
            candidates_scored: feasible * res as u64,
            ..Default::default()
        },
        started,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupEstimate {
    pub id: String,
    pub qualified: u64,
    pub unqualified: u64,
    pub tpr: f64,
    pub tpr_se: f64,
    pub fpr: f64,
    pub fpr_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub n: u64,
    pub recall: f64,
    pub recall_se: f64,
    pub precision: Option<f64>,
    pub precision_se: f64,
    pub groups: Vec<GroupEstimate>,
}

fn proportion(hits: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 0.0);
    }
    let p = hits as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// Simulates `n` candidates drawn from the pipeline's population.
pub fn monte_carlo(pl: &Pipeline, pol: &Policy, n: u64, seed: u64) -> Result<McEstimate> {
    if n == 0 {
        return Err(Error::InvalidParams("need at least one candidate".into()));
    }
    let rows = pol.aligned(pl)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Cumulative masses over (group, label) cells.
    let mut cells = Vec::with_capacity(2 * pl.len());
    let mut acc = 0.0;
    for (x, g) in pl.groups().iter().enumerate() {
        acc += g.q;
        cells.push((acc, x, true));
        acc += g.u;
        cells.push((acc, x, false));
    }
    // [x] -> (qualified, qualified promoted, unqualified, unqualified promoted)
    let mut tally = vec![[0u64; 4]; pl.len()];
    for _ in 0..n {
        let r = rng.gen::<f64>() * acc;
        let &(_, x, qualified) = cells.iter().find(|c| r < c.0).unwrap_or(cells.last().expect("non-empty"));
        let g = &pl.groups()[x];
        let mut reached = true;
        for (t, p) in g.stages.iter().zip(rows[x]) {
            let pass = rng.gen::<f64>() < if qualified { t.tau1 } else { t.tau0 };
            let promote = rng.gen::<f64>() < if pass { p.pi1 } else { p.pi0 };
            if !promote {
                reached = false;
                break;
            }
        }
        let slot = if qualified { 0 } else { 2 };
        tally[x][slot] += 1;
        tally[x][slot + 1] += reached as u64;
    }
    let groups = pl
        .groups()
        .iter()
        .zip(&tally)
        .map(|(g, t)| {
            let (tpr, tpr_se) = proportion(t[1], t[0]);
            let (fpr, fpr_se) = proportion(t[3], t[2]);
            GroupEstimate {
                id: g.id.clone(),
                qualified: t[0],
                unqualified: t[2],
                tpr,
                tpr_se,
                fpr,
                fpr_se,
            }
        })
        .collect();
    let q: u64 = tally.iter().map(|t| t[0]).sum();
    let tp: u64 = tally.iter().map(|t| t[1]).sum();
    let fp: u64 = tally.iter().map(|t| t[3]).sum();
    let (recall, recall_se) = proportion(tp, q);
    let (precision, precision_se) = if tp + fp == 0 {
        (None, 0.0)
    } else {
        let (p, se) = proportion(tp, tp + fp);
        (Some(p), se)
    };
    Ok(McEstimate {
        n,
        recall,
        recall_se,
        precision,
        precision_se,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Group, TestStats};

    fn one_stage() -> Pipeline {
        Pipeline::new(vec![
            Group::new("A", 0.25, 0.25, vec![TestStats::new(1.0, 0.5).unwrap()]),
            Group::new("B", 0.25, 0.25, vec![TestStats::new(0.8, 0.5).unwrap()]),
        ])
        .unwrap()
    }

    #[test]
    fn decode_roundtrip() {
        let row = decode_row(0, 2, 4);
        assert!(row.iter().all(|s| *s == StagePolicy::REJECT));
        let last = decode_row(5u64.pow(4) - 1, 2, 4);
        assert!(last.iter().all(|s| *s == StagePolicy::BYPASS));
        assert_eq!(decode_row(1, 1, 4), vec![StagePolicy { pi1: 0.0, pi0: 0.25 }]);
    }

    #[test]
    fn recall_objective_picks_bypass() {
        let pl = one_stage();
        let spec = GridSpec::new(4, 1e-3).unwrap();
        let r = grid_search(&pl, &Objective::recall(), &spec, Constraint::None).unwrap();
        assert_eq!(r.score, 1.0);
        // A's test has tau1 = 1, so (1, y) ties with bypass on recall.
        assert_eq!(r.policy.get("B").unwrap(), &[StagePolicy::BYPASS]);
    }

    #[test]
    fn budget_enforced() {
        let pl = one_stage();
        let mut spec = GridSpec::new(10, 1e-3).unwrap();
        spec.budget = 100;
        assert!(matches!(
            grid_search(&pl, &Objective::precision(), &spec, Constraint::Eo),
            Err(Error::SizeLimit { .. })
        ));
        assert!(GridSpec::new(1, 0.1).is_err());
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let pl = one_stage();
        let pol = Policy::uniform(&pl, StagePolicy::new(0.7, 0.2).unwrap());
        let a = monte_carlo(&pl, &pol, 10_000, 7).unwrap();
        let b = monte_carlo(&pl, &pol, 10_000, 7).unwrap();
        assert_eq!(a, b);
        let bypass = monte_carlo(&pl, &Policy::bypass(&pl), 1000, 1).unwrap();
        assert_eq!(bypass.recall, 1.0);
    }
}
