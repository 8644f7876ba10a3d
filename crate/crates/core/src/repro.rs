//! Built-in worked examples with their asserted numbers.

use serde::Serialize;

use crate::eodds::{eodds_precision_bound, gap_instance};
use crate::error::Result;
use crate::exact::{solve_exact, solve_exact_with, Configuration, ExactOptions, Level};
use crate::fairness::{check_eo, check_eodds, Scope};
use crate::groupblind::solve_groupblind;
use crate::model::{evaluate, Group, Pipeline, Policy, StagePolicy, TestStats};
use crate::objective::Objective;
use crate::oracle::structured_grid_search_with;
use crate::ratio::{max_precision, opportunity_ratio, two_approx, RatioPolicyKind};

pub const IDS: [&str; 6] = [
    "one-stage",
    "nonconvex",
    "or-suboptimal",
    "nonlocal",
    "eodds-gap",
    "groupblind-bypass",
];

/// The example pipelines.
pub mod instances {
    use super::*;

    fn t(a: f64, b: f64) -> TestStats {
        TestStats::weak(a, b).expect("valid literal")
    }

    fn sp(a: f64, b: f64) -> StagePolicy {
        StagePolicy::new(a, b).expect("valid literal")
    }

    /// One test, `A = (1, 1/2)`, `B = (0.8, 1/2)`, all masses 1/4.
    pub fn one_stage() -> Pipeline {
        Pipeline::new(vec![
            Group::new("A", 0.25, 0.25, vec![t(1.0, 0.5)]),
            Group::new("B", 0.25, 0.25, vec![t(0.8, 0.5)]),
        ])
        .expect("valid instance")
    }

    /// Two stages with the groups' tests in opposite order; the second
    /// test of `A` and first of `B` are uninformative.
    pub fn nonconvex() -> Pipeline {
        Pipeline::new(vec![
            Group::new("A", 0.25, 0.25, vec![t(0.75, 0.0), t(0.5, 0.5)]),
            Group::new("B", 0.25, 0.25, vec![t(0.5, 0.5), t(0.75, 0.0)]),
        ])
        .expect("valid instance")
    }

    /// The two Equal Opportunity policies `P` and `Q` of [`nonconvex`].
    pub fn nonconvex_policies(pl: &Pipeline) -> (Policy, Policy) {
        let p = Policy::from_rows(
            pl,
            vec![
                vec![StagePolicy::FULL_USE, StagePolicy::BYPASS],
                vec![StagePolicy::BYPASS, StagePolicy::FULL_USE],
            ],
        )
        .expect("shape");
        let q = Policy::from_rows(
            pl,
            vec![
                vec![StagePolicy::FULL_USE, StagePolicy::BYPASS],
                vec![sp(1.0, 0.5), StagePolicy::BYPASS],
            ],
        )
        .expect("shape");
        (p, q)
    }

    /// Entrywise average of two policies.
    pub fn midpoint(pl: &Pipeline, a: &Policy, b: &Policy) -> Policy {
        let (ra, rb) = (a.aligned(pl).expect("shape"), b.aligned(pl).expect("shape"));
        let rows = ra
            .iter()
            .zip(&rb)
            .map(|(x, y)| {
                x.iter()
                    .zip(y.iter())
                    .map(|(s, u)| sp((s.pi1 + u.pi1) / 2.0, (s.pi0 + u.pi0) / 2.0))
                    .collect()
            })
            .collect();
        Policy::from_rows(pl, rows).expect("shape")
    }

    /// Two stages where the Opportunity Ratio policy loses to a mixed one.
    pub fn or_suboptimal() -> Pipeline {
        Pipeline::new(vec![
            Group::new("A", 0.25, 0.25, vec![t(0.75, 0.0), t(0.5, 0.25)]),
            Group::new("B", 0.25, 0.25, vec![t(0.5, 0.25), t(0.75, 0.0)]),
        ])
        .expect("valid instance")
    }

    /// One group with `q = u = 1/2`: test `(1/2, 0)` then `k-1` copies of
    /// `(0.99, 1/2)`.
    pub fn nonlocal(k: usize) -> Pipeline {
        let mut stages = vec![t(0.5, 0.0)];
        stages.extend(std::iter::repeat_n(t(0.99, 0.5), k - 1));
        Pipeline::new(vec![Group::new("X", 0.5, 0.5, stages)]).expect("valid instance")
    }

    /// `recall + 2·precision`, scaled by 1/3 to the linear form.
    pub fn nonlocal_objective() -> Objective {
        Objective::linear(2.0 / 3.0)
    }

    /// One test, perfect for `A`, half as sensitive for `B`.
    pub fn groupblind_bypass() -> Pipeline {
        Pipeline::new(vec![
            Group::new("A", 0.25, 0.25, vec![t(1.0, 0.0)]),
            Group::new("B", 0.25, 0.25, vec![t(0.5, 0.0)]),
        ])
        .expect("valid instance")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub expected: String,
    pub actual: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproResult {
    pub id: String,
    pub checks: Vec<Check>,
}

impl ReproResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

struct Checks(Vec<Check>);

impl Checks {
    fn close(&mut self, name: &str, actual: f64, expected: f64, tol: f64) {
        self.0.push(Check {
            name: name.into(),
            expected: format!("{expected} ± {tol:e}"),
            actual: format!("{actual}"),
            pass: (actual - expected).abs() <= tol,
        });
    }

    fn holds(&mut self, name: &str, expected: &str, actual: impl std::fmt::Display, pass: bool) {
        self.0.push(Check {
            name: name.into(),
            expected: expected.into(),
            actual: actual.to_string(),
            pass,
        });
    }
}

fn near(a: &[StagePolicy], b: &[StagePolicy]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| (x.pi1 - y.pi1).abs() <= 1e-9 && (x.pi0 - y.pi0).abs() <= 1e-9)
}

fn restricted(filter: &(dyn Fn(&Configuration) -> bool + Sync)) -> ExactOptions<'_> {
    ExactOptions {
        filter: Some(filter),
        ..Default::default()
    }
}

fn first_level_is(level: Level) -> impl Fn(&Configuration) -> bool + Sync {
    move |c: &Configuration| c.groups[0].levels[0] == level
}

/// Runs one example. `None` for an unknown id.
pub fn run(id: &str) -> Option<Result<ReproResult>> {
    let f = match id {
        "one-stage" => one_stage,
        "nonconvex" => nonconvex,
        "or-suboptimal" => or_suboptimal,
        "nonlocal" => nonlocal,
        "eodds-gap" => eodds_gap,
        "groupblind-bypass" => groupblind_bypass,
        _ => return None,
    };
    Some(f().map(|checks| ReproResult {
        id: id.into(),
        checks: checks.0,
    }))
}

fn one_stage() -> Result<Checks> {
    let mut c = Checks(vec![]);
    let pl = instances::one_stage();
    let pass_only = Policy::uniform(&pl, StagePolicy::FULL_USE);
    c.close("promote-iff-pass EO gap", check_eo(&pl, &pass_only, 1e-6, Scope::Final)?.max_gap, 0.2, 1e-12);
    let q = Policy::from_rows(&pl, vec![vec![StagePolicy::FULL_USE], vec![StagePolicy::BYPASS]])?;
    let r = check_eo(&pl, &q, 1e-6, Scope::Final)?;
    c.holds("policy Q satisfies EO", "satisfied", r.satisfied, r.satisfied);
    let or = opportunity_ratio(&pl, RatioPolicyKind::FirstStage)?;
    c.close("ratio policy pi1 for A", or.get("A").expect("A")[0].pi1, 0.8, 1e-12);
    c.close("max precision", max_precision(&pl), 0.64, 1e-12);
    c.close("ratio policy precision", evaluate(&pl, &or)?.precision_or_zero(), 0.64, 1e-12);
    Ok(c)
}

fn nonconvex() -> Result<Checks> {
    let mut c = Checks(vec![]);
    let pl = instances::nonconvex();
    let (p, q) = instances::nonconvex_policies(&pl);
    for (name, pol) in [("P", &p), ("Q", &q)] {
        let r = check_eo(&pl, pol, 1e-12, Scope::Final)?;
        c.holds(&format!("policy {name} satisfies EO"), "satisfied", r.max_gap, r.satisfied);
    }
    let mid = instances::midpoint(&pl, &p, &q);
    let ev = evaluate(&pl, &mid)?;
    c.close("midpoint tpr_A", ev.groups[0].tpr, 0.75, 1e-12);
    c.close("midpoint tpr_B", ev.groups[1].tpr, 49.0 / 64.0, 1e-12);
    c.close("midpoint EO gap", check_eo(&pl, &mid, 1e-6, Scope::Final)?.max_gap, 1.0 / 64.0, 1e-12);
    let odds = check_eodds(&pl, &p, 1e-12, Scope::Final)?;
    c.holds("P satisfies EOdds at the end", "satisfied", odds.max_gap, odds.satisfied);
    let staged = check_eodds(&pl, &p, 1e-6, Scope::PerStage)?;
    c.holds(
        "P violates per-stage EOdds",
        "violated at stage 1",
        format!("gap {} at stage {}", staged.max_gap, staged.stage),
        !staged.satisfied && staged.stage == 1,
    );
    Ok(c)
}

fn or_suboptimal() -> Result<Checks> {
    let mut c = Checks(vec![]);
    let pl = instances::or_suboptimal();
    let f = Objective::linear(0.5);
    let exact = solve_exact(&pl, &f)?;
    c.close("exact optimum", exact.score, 7.0 / 8.0, 1e-9);
    c.close("exact recall", exact.evaluation.recall, 0.75, 1e-9);
    c.close("exact precision", exact.evaluation.precision_or_zero(), 1.0, 1e-9);
    let or = opportunity_ratio(&pl, RatioPolicyKind::FirstStage)?;
    let ev = evaluate(&pl, &or)?;
    c.close("ratio policy recall", ev.recall, 3.0 / 8.0, 1e-12);
    c.close("ratio policy score", f.score(ev.recall, ev.precision), 11.0 / 16.0, 1e-9);
    c.close("2-approximation score", two_approx(&pl, &f)?.score, 0.75, 1e-12);
    Ok(c)
}

fn nonlocal() -> Result<Checks> {
    let mut c = Checks(vec![]);
    let f = instances::nonlocal_objective();
    let full = first_level_is(Level::FullUse);
    let bypass = first_level_is(Level::Bypass);

    let two = instances::nonlocal(2);
    let best = solve_exact(&two, &f)?;
    c.close("k=2 optimum (recall + 2 precision)", 3.0 * best.score, 2.5, 1e-9);
    let row = best.policy.groups[0].stages.clone();
    c.holds(
        "k=2 optimum uses t1 fully and bypasses t2",
        "(1, 0) (1, 1)",
        row.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "),
        near(&row, &[StagePolicy::FULL_USE, StagePolicy::BYPASS]),
    );
    let other = solve_exact_with(&two, &f, &restricted(&bypass))?;
    c.holds("k=2 best bypassing t1", "< 2.32", 3.0 * other.score, 3.0 * other.score < 2.32);
    let grid = structured_grid_search_with(&two, &f, 20_001, u64::MAX, None)?;
    c.close("k=2 structured oracle", 3.0 * grid.score, 2.5, 1e-6);

    let three = instances::nonlocal(3);
    let best = solve_exact(&three, &f)?;
    c.holds("k=3 optimum", "> 2.57", 3.0 * best.score, 3.0 * best.score > 2.57);
    let s1 = best.policy.groups[0].stages[0];
    c.holds("k=3 optimum bypasses t1", "(1, 1)", s1.to_string(), near(&[s1], &[StagePolicy::BYPASS]));
    let kept = solve_exact_with(&three, &f, &restricted(&full))?;
    c.holds("k=3 best using t1 fully", "< 2.57", 3.0 * kept.score, 3.0 * kept.score < 2.57);
    let grid = structured_grid_search_with(&three, &f, 20_001, u64::MAX, None)?;
    c.holds("k=3 structured oracle", "> 2.57", 3.0 * grid.score, 3.0 * grid.score > 2.57);
    Ok(c)
}

fn eodds_gap() -> Result<Checks> {
    let mut c = Checks(vec![]);
    let pl = gap_instance(0.2, 1e-4, 1e-3, 2, 2)?;
    let ratio = max_precision(&pl) / eodds_precision_bound(&pl).value;
    c.holds("ratio at gamma=0.2", "in [4.95, 5.0]", ratio, (4.95..=5.0).contains(&ratio));
    let pl = gap_instance(0.5, 1e-7, 1e-7, 1, 2)?;
    let ratio = max_precision(&pl) / eodds_precision_bound(&pl).value;
    c.close("ratio at gamma=0.5, mu and delta near 0", ratio, 2.0, 1e-5);
    Ok(c)
}

fn groupblind_bypass() -> Result<Checks> {
    let mut c = Checks(vec![]);
    let pl = instances::groupblind_bypass();
    let f = Objective::linear(0.5);
    let blind = solve_groupblind(&pl, &f, 0.1)?;
    let s = blind.policy.groups[0].stages[0];
    c.close("shared policy pi1 - pi0", s.pi1 - s.pi0, 0.0, 1e-9);
    c.close("blind precision", blind.evaluation.precision_or_zero(), 0.5, 1e-9);
    c.close("blind recall", blind.evaluation.recall, 1.0, 1e-9);
    let aware = solve_exact(&pl, &f)?;
    c.holds(
        "group-aware optimum is higher",
        "> blind score",
        format!("{} vs {}", aware.score, blind.score),
        aware.score > blind.score + 1e-9,
    );
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_id() {
        assert!(run("nope").is_none());
    }

    #[test]
    fn cheap_examples_pass() {
        for id in ["one-stage", "nonconvex", "or-suboptimal", "eodds-gap"] {
            let r = run(id).unwrap().unwrap();
            assert!(r.passed(), "{id}: {:#?}", r.checks);
        }
    }
}
