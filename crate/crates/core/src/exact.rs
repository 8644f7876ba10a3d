//! Exact Equal Opportunity optimization by structural enumeration.
//!
//! Some optimal policy uses every level either fully `(1,0)` or as a bypass
//! `(1,1)`, except for at most one partially used level per group. That
//! level either promotes a fraction of the passers (`(p,0)`) or all passers
//! plus a fraction of the failers (`(1,y)`). Fixing this structure leaves a
//! one-dimensional problem in the common true-positive rate `t`, solved in
//! closed form.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Group, Pipeline, Policy, StagePolicy};
use crate::objective::Objective;
use crate::report::{Certificate, Diagnostics, Method, SolverReport};

pub const DEFAULT_CONFIG_BUDGET: u64 = 1 << 26;
pub const DEFAULT_CUSTOM_RESOLUTION: usize = 10_001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    FullUse,
    Bypass,
    /// `(p, 0)` with `p` in `(0, 1]`.
    PassFraction,
    /// `(1, y)` with `y` in `[0, 1]`.
    FailFraction,
}

impl Level {
    pub fn is_partial(self) -> bool {
        matches!(self, Level::PassFraction | Level::FailFraction)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct GroupConfig {
    pub levels: Vec<Level>,
}

impl GroupConfig {
    /// 0-based index of the partially used level.
    pub fn partial_level(&self) -> usize {
        self.levels
            .iter()
            .position(|l| l.is_partial())
            .expect("one partial level")
    }

    pub fn partial_type(&self) -> Level {
        self.levels[self.partial_level()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Configuration {
    pub groups: Vec<GroupConfig>,
}

/// Configurations per group: `k · 2^(k-1) · 2`.
pub fn per_group_count(k: usize) -> u64 {
    (k as u64) << k
}

/// Total configuration count, as a float since it overflows quickly.
pub fn config_count(pl: &Pipeline) -> f64 {
    (per_group_count(pl.k()) as f64).powi(pl.len() as i32)
}

fn check_budget(pl: &Pipeline, budget: u64) -> Result<u64> {
    let n = config_count(pl);
    if n > budget as f64 {
        return Err(Error::SizeLimit {
            what: "configuration count",
            required: n,
            budget,
        });
    }
    Ok(n as u64)
}

fn decode_group(k: usize, mut code: u64) -> GroupConfig {
    let partial = if code.is_multiple_of(2) {
        Level::PassFraction
    } else {
        Level::FailFraction
    };
    code /= 2;
    let level = (code % k as u64) as usize;
    let mut mask = code / k as u64;
    let levels = (0..k)
        .map(|i| {
            if i == level {
                return partial;
            }
            let bit = mask & 1;
            mask >>= 1;
            if bit == 0 {
                Level::FullUse
            } else {
                Level::Bypass
            }
        })
        .collect();
    GroupConfig { levels }
}

/// The configuration at position `index` of the enumeration order. The
/// first group is the most significant digit.
pub fn config_at(pl: &Pipeline, index: u64) -> Configuration {
    let per = per_group_count(pl.k());
    let mut rest = index;
    let mut groups = vec![GroupConfig { levels: vec![] }; pl.len()];
    for slot in groups.iter_mut().rev() {
        *slot = decode_group(pl.k(), rest % per);
        rest /= per;
    }
    Configuration { groups }
}

/// All configurations in their fixed order.
pub fn enumerate_configs(pl: &Pipeline, budget: u64) -> Result<impl Iterator<Item = Configuration> + '_> {
    let n = check_budget(pl, budget)?;
    Ok((0..n).map(move |i| config_at(pl, i)))
}

/// One group's share of an inner problem: `fpr(t) = a·t + b` for the
/// group's tpr `t` in `[t_lo, t_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupLine {
    pub fixed_m: f64,
    pub fixed_n: f64,
    pub a: f64,
    pub b: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerProblem {
    pub lines: Vec<GroupLine>,
    pub t_lo: f64,
    pub t_hi: f64,
    /// `t_lo = 0` is excluded: it would reject everyone.
    pub lo_open: bool,
    pub q_total: f64,
    /// `C = Q + sum u_X a_X`.
    pub c: f64,
    /// `D = sum u_X b_X`.
    pub d: f64,
}

impl InnerProblem {
    pub fn precision(&self, t: f64) -> Option<f64> {
        let den = self.c * t + self.d;
        (t > 0.0 && den > 0.0).then(|| (self.q_total * t / den).min(1.0))
    }
}

fn group_line(g: &Group, cfg: &GroupConfig) -> GroupLine {
    let (mut fixed_m, mut fixed_n) = (1.0, 1.0);
    for (t, l) in g.stages.iter().zip(&cfg.levels) {
        if *l == Level::FullUse {
            fixed_m *= t.tau1;
            fixed_n *= t.tau0;
        }
    }
    let p = g.stages[cfg.partial_level()];
    match cfg.partial_type() {
        Level::PassFraction => GroupLine {
            fixed_m,
            fixed_n,
            a: fixed_n * p.tau0 / (fixed_m * p.tau1),
            b: 0.0,
            t_lo: 0.0,
            t_hi: fixed_m * p.tau1,
        },
        _ if p.tau1 == 1.0 => GroupLine {
            fixed_m,
            fixed_n,
            a: 0.0,
            b: fixed_n * p.tau0,
            t_lo: fixed_m,
            t_hi: fixed_m,
        },
        _ => GroupLine {
            fixed_m,
            fixed_n,
            a: fixed_n * (1.0 - p.tau0) / ((1.0 - p.tau1) * fixed_m),
            b: fixed_n * (p.tau0 - p.tau1) / (1.0 - p.tau1),
            t_lo: fixed_m * p.tau1,
            t_hi: fixed_m,
        },
    }
}

/// Reduces a configuration to a problem in the common tpr `t`. `None` when
/// the groups' tpr ranges do not meet.
pub fn build_inner(pl: &Pipeline, cfg: &Configuration) -> Option<InnerProblem> {
    let lines: Vec<GroupLine> = pl
        .groups()
        .iter()
        .zip(&cfg.groups)
        .map(|(g, c)| group_line(g, c))
        .collect();
    let t_hi = lines.iter().map(|l| l.t_hi).fold(f64::INFINITY, f64::min);
    let mut t_lo = lines.iter().map(|l| l.t_lo).fold(0.0, f64::max);
    if t_hi <= 0.0 || t_lo > t_hi * (1.0 + 1e-12) {
        return None;
    }
    t_lo = t_lo.min(t_hi);
    let q_total = pl.q_total();
    let (mut c, mut d) = (q_total, 0.0);
    for (g, l) in pl.groups().iter().zip(&lines) {
        c += g.u * l.a;
        d += g.u * l.b;
    }
    Some(InnerProblem {
        lines,
        t_lo,
        t_hi,
        lo_open: t_lo == 0.0,
        q_total,
        c,
        d,
    })
}

/// Best common tpr and its score. Linear and reciprocal objectives are
/// solved in closed form; custom objectives by a scan of `resolution`
/// evenly spaced points.
pub fn optimize_inner(ip: &InnerProblem, objective: &Objective, resolution: usize) -> Result<(f64, f64)> {
    let (lo, hi) = (ip.t_lo, ip.t_hi);
    if !(lo <= hi) || hi <= 0.0 {
        return Err(Error::DegenerateInterval { lo, hi });
    }
    let score = |t: f64| objective.score(t, ip.precision(t));
    let mut cands = vec![hi];
    if !ip.lo_open {
        cands.push(lo);
    }
    match *objective {
        Objective::Linear { alpha } => {
            if alpha > 0.0 && alpha < 1.0 && ip.d < 0.0 {
                let s = ((-alpha * ip.q_total * ip.d / (1.0 - alpha)).sqrt() - ip.d) / ip.c;
                if s > lo && s < hi {
                    cands.push(s);
                }
            }
        }
        Objective::Reciprocal { alpha } => {
            let b = (1.0 - alpha) + alpha * ip.d / ip.q_total;
            // g is `const + b/t`: decreasing in t when b >= 0.
            if b >= 0.0 || ip.lo_open {
                cands.truncate(1);
            } else {
                cands = vec![hi, lo];
            }
        }
        Objective::Custom(_) => {
            let n = resolution.max(2);
            cands.extend(
                (1..n - 1)
                    .map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64)
                    .filter(|&t| t > 0.0),
            );
        }
    }
    let mut best = (hi, score(hi));
    for &t in &cands[1..] {
        let s = score(t);
        if objective.better(s, best.1) || (s == best.1 && t > best.0) {
            best = (t, s);
        }
    }
    Ok(best)
}

/// The stage policies realizing common tpr `t` under `cfg`.
pub fn reconstruct(pl: &Pipeline, cfg: &Configuration, t: f64) -> Policy {
    let rows = pl
        .groups()
        .iter()
        .zip(&cfg.groups)
        .map(|(g, c)| {
            let line = group_line(g, c);
            c.levels
                .iter()
                .zip(&g.stages)
                .map(|(l, ts)| match l {
                    Level::FullUse => StagePolicy::FULL_USE,
                    Level::Bypass => StagePolicy::BYPASS,
                    Level::PassFraction => StagePolicy {
                        pi1: (t / (line.fixed_m * ts.tau1)).clamp(0.0, 1.0),
                        pi0: 0.0,
                    },
                    Level::FailFraction if ts.tau1 == 1.0 => StagePolicy::FULL_USE,
                    Level::FailFraction => StagePolicy {
                        pi1: 1.0,
                        pi0: ((t / line.fixed_m - ts.tau1) / (1.0 - ts.tau1)).clamp(0.0, 1.0),
                    },
                })
                .collect()
        })
        .collect();
    Policy::from_rows(pl, rows).expect("shape matches by construction")
}

type ConfigFilter<'a> = &'a (dyn Fn(&Configuration) -> bool + Sync);

#[derive(Clone, Copy)]
pub struct ExactOptions<'a> {
    pub budget: u64,
    /// Scan points per configuration for custom objectives.
    pub custom_resolution: usize,
    /// Restricts the search to configurations passing the filter.
    pub filter: Option<ConfigFilter<'a>>,
}

impl Default for ExactOptions<'_> {
    fn default() -> Self {
        Self {
            budget: DEFAULT_CONFIG_BUDGET,
            custom_resolution: DEFAULT_CUSTOM_RESOLUTION,
            filter: None,
        }
    }
}

/// Utility rounded to 1e-11 so that rounding noise compares as a tie.
pub(crate) fn utility_key(objective: &Objective, score: f64) -> i128 {
    let u = objective.utility(score);
    if u.is_nan() || u == f64::NEG_INFINITY {
        i128::MIN
    } else if u == f64::INFINITY {
        i128::MAX
    } else {
        (u * 1e11).round() as i128
    }
}

/// A scored configuration. Ordered by score (quantized to absorb rounding),
/// then higher `t`, then earlier index.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub index: u64,
    pub t: f64,
    key: i128,
}

impl Candidate {
    pub(crate) fn new(objective: &Objective, index: u64, t: f64, score: f64) -> Self {
        Self {
            index,
            t,
            key: utility_key(objective, score),
        }
    }

    pub(crate) fn beats(&self, other: &Self) -> bool {
        (self.key, self.t, std::cmp::Reverse(self.index))
            > (other.key, other.t, std::cmp::Reverse(other.index))
    }

    pub(crate) fn pick(a: Option<Self>, b: Option<Self>) -> Option<Self> {
        match (a, b) {
            (Some(a), Some(b)) => Some(if b.beats(&a) { b } else { a }),
            (a, None) => a,
            (None, b) => b,
        }
    }
}

pub fn solve_exact(pl: &Pipeline, objective: &Objective) -> Result<SolverReport> {
    solve_exact_with(pl, objective, &ExactOptions::default())
}

pub fn solve_exact_with(pl: &Pipeline, objective: &Objective, opts: &ExactOptions) -> Result<SolverReport> {
    let started = Instant::now();
    objective.validate()?;
    pl.require_effective()?;
    let n = check_budget(pl, opts.budget)?;
    let (best, feasible) = (0..n)
        .into_par_iter()
        .map(|index| {
            let cfg = config_at(pl, index);
            if opts.filter.is_some_and(|f| !f(&cfg)) {
                return (None, 0u64);
            }
            let Some(ip) = build_inner(pl, &cfg) else {
                return (None, 0);
            };
            let (t, score) =
                optimize_inner(&ip, objective, opts.custom_resolution).expect("interval checked in build_inner");
            (Some(Candidate::new(objective, index, t, score)), 1)
        })
        .reduce(|| (None, 0), |a, b| (Candidate::pick(a.0, b.0), a.1 + b.1));
    let best = best.ok_or_else(|| Error::InvalidParams("no configuration passes the filter".into()))?;
    let configuration = config_at(pl, best.index);
    let policy = reconstruct(pl, &configuration, best.t);
    SolverReport::assemble(
        Method::Exact,
        pl,
        objective,
        None,
        policy,
        Certificate::Exact {
            configuration_index: best.index,
            configuration,
            t_star: best.t,
        },
        Diagnostics {
            configs_enumerated: n,
            configs_feasible: feasible,
            candidates_scored: feasible,
            ..Default::default()
        },
        started,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TestStats;

    fn t(a: f64, b: f64) -> TestStats {
        TestStats::new(a, b).unwrap()
    }

    fn pipeline(groups: Vec<(&str, f64, f64, Vec<TestStats>)>) -> Pipeline {
        Pipeline::new(groups.into_iter().map(|(id, q, u, s)| Group::new(id, q, u, s)).collect()).unwrap()
    }

    #[test]
    fn counts() {
        let one = pipeline(vec![("A", 0.5, 0.5, vec![t(0.9, 0.1)])]);
        assert_eq!(enumerate_configs(&one, DEFAULT_CONFIG_BUDGET).unwrap().count(), 2);
        let two = pipeline(vec![
            ("A", 0.25, 0.25, vec![t(0.9, 0.1); 2]),
            ("B", 0.25, 0.25, vec![t(0.8, 0.1); 2]),
        ]);
        assert_eq!(enumerate_configs(&two, DEFAULT_CONFIG_BUDGET).unwrap().count(), 64);
        let three = pipeline(vec![("A", 0.5, 0.5, vec![t(0.9, 0.1); 3])]);
        let all: Vec<_> = enumerate_configs(&three, DEFAULT_CONFIG_BUDGET).unwrap().collect();
        assert_eq!(all.len(), 24);
        for (i, a) in all.iter().enumerate() {
            assert_eq!(a.groups[0].levels.iter().filter(|l| l.is_partial()).count(), 1);
            assert!(all[..i].iter().all(|b| b != a));
        }
        assert!(matches!(enumerate_configs(&two, 63), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn symmetric_inner_problem() {
        let s = vec![t(0.8, 0.3), t(0.6, 0.2)];
        let pl = pipeline(vec![("A", 0.2, 0.3, s.clone()), ("B", 0.3, 0.2, s)]);
        let cfg = Configuration {
            groups: vec![
                GroupConfig {
                    levels: vec![Level::PassFraction, Level::FullUse]
                };
                2
            ],
        };
        let ip = build_inner(&pl, &cfg).unwrap();
        assert!((ip.t_hi - 0.48).abs() < 1e-15);
        for l in &ip.lines {
            assert!((l.a - 0.06 / 0.48).abs() < 1e-15);
            assert_eq!(l.b, 0.0);
        }
        let (ts, _) = optimize_inner(&ip, &Objective::linear(0.3), 0).unwrap();
        assert_eq!(ts, ip.t_hi);
    }

    #[test]
    fn disjoint_ranges_are_infeasible() {
        let pl = pipeline(vec![
            ("A", 0.25, 0.25, vec![t(0.5, 0.1)]),
            ("B", 0.25, 0.25, vec![t(0.9, 0.1)]),
        ]);
        // A tops out at 0.5 with (p,0); B's (1,y) range starts at 0.9.
        let cfg = Configuration {
            groups: vec![
                GroupConfig {
                    levels: vec![Level::PassFraction],
                },
                GroupConfig {
                    levels: vec![Level::FailFraction],
                },
            ],
        };
        assert!(build_inner(&pl, &cfg).is_none());
    }

    #[test]
    fn fail_fraction_line_matches_direct_rates() {
        let pl = pipeline(vec![("A", 0.4, 0.6, vec![t(0.7, 0.2), t(0.6, 0.35)])]);
        let cfg = Configuration {
            groups: vec![GroupConfig {
                levels: vec![Level::FullUse, Level::FailFraction],
            }],
        };
        let ip = build_inner(&pl, &cfg).unwrap();
        for j in 0..=10 {
            let tt = ip.t_lo + (ip.t_hi - ip.t_lo) * j as f64 / 10.0;
            let ev = crate::model::evaluate(&pl, &reconstruct(&pl, &cfg, tt)).unwrap();
            let l = ip.lines[0];
            assert!((ev.groups[0].tpr - tt).abs() < 1e-12);
            assert!((ev.groups[0].fpr - (l.a * tt + l.b)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_interval_rejected() {
        let mut ip = build_inner(
            &pipeline(vec![("A", 0.5, 0.5, vec![t(0.9, 0.1)])]),
            &Configuration {
                groups: vec![GroupConfig {
                    levels: vec![Level::PassFraction],
                }],
            },
        )
        .unwrap();
        ip.t_lo = 1.0;
        assert!(matches!(
            optimize_inner(&ip, &Objective::linear(0.5), 0),
            Err(Error::DegenerateInterval { .. })
        ));
    }
}
