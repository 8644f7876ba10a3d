//! The precision-optimal Equal Opportunity policy, its closed-form
//! precision, and the two-approximation for a mixed objective.

use fair_screen::ratio::{max_precision, opportunity_ratio, two_approx, RatioPolicyKind};
use fair_screen::{evaluate, Group, Objective, Pipeline, TestStats};

fn main() -> fair_screen::Result<()> {
    let pl = Pipeline::new(vec![
        Group::new("A", 0.2, 0.3, vec![TestStats::new(0.9, 0.2)?, TestStats::new(0.8, 0.4)?]),
        Group::new("B", 0.1, 0.4, vec![TestStats::new(0.7, 0.3)?, TestStats::new(0.9, 0.1)?]),
    ])?;
    println!("precision ceiling {:.6}", max_precision(&pl));

    for kind in [RatioPolicyKind::FirstStage, RatioPolicyKind::PerStage] {
        let pol = opportunity_ratio(&pl, kind)?;
        let ev = evaluate(&pl, &pol)?;
        println!(
            "{kind:?}: precision {:.6}, recall {:.6}",
            ev.precision_or_zero(),
            ev.recall
        );
    }

    let r = two_approx(&pl, &Objective::linear(0.5))?;
    println!("two-approx for f_0.5: score {:.6}, certificate {:?}", r.score, r.certificate);
    Ok(())
}
