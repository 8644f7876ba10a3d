//! Build a two-stage pipeline, evaluate a hand-written policy and check
//! both fairness criteria.

use fair_screen::fairness::{check_eo, check_eodds, Scope, DEFAULT_TOLERANCE};
use fair_screen::{evaluate, Group, Pipeline, Policy, StagePolicy, TestStats};

fn main() -> fair_screen::Result<()> {
    let resume = TestStats::new(0.8, 0.3)?;
    let interview = TestStats::new(0.7, 0.2)?;
    let pl = Pipeline::new(vec![
        Group::new("A", 0.15, 0.45, vec![resume, interview]),
        Group::new("B", 0.10, 0.30, vec![TestStats::new(0.6, 0.3)?, interview]),
    ])?;

    // Group A is screened by both tests; B skips the first one.
    let pol = Policy::from_rows(
        &pl,
        vec![
            vec![StagePolicy::FULL_USE, StagePolicy::FULL_USE],
            vec![StagePolicy::new(0.8, 0.8)?, StagePolicy::FULL_USE],
        ],
    )?;
    let ev = evaluate(&pl, &pol)?;
    for g in &ev.groups {
        println!("{}: tpr {:.4}, fpr {:.4}", g.id, g.tpr, g.fpr);
    }
    println!("recall {:.4}, precision {:.4}", ev.recall, ev.precision_or_zero());

    for scope in [Scope::Final, Scope::PerStage] {
        let eo = check_eo(&pl, &pol, DEFAULT_TOLERANCE, scope)?;
        let eodds = check_eodds(&pl, &pol, DEFAULT_TOLERANCE, scope)?;
        println!(
            "{scope:?}: EO {} (gap {:.2e}), EOdds {} (gap {:.2e})",
            eo.satisfied, eo.max_gap, eodds.satisfied, eodds.max_gap
        );
    }
    Ok(())
}
