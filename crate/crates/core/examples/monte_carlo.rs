//! Simulates candidates through a pipeline and compares the empirical
//! rates with the analytic ones.

use fair_screen::oracle::monte_carlo;
use fair_screen::ratio::{opportunity_ratio, RatioPolicyKind};
use fair_screen::{evaluate, Group, Pipeline, TestStats};

fn main() -> fair_screen::Result<()> {
    let pl = Pipeline::new(vec![
        Group::new("A", 0.2, 0.3, vec![TestStats::new(0.9, 0.3)?, TestStats::new(0.8, 0.2)?]),
        Group::new("B", 0.1, 0.4, vec![TestStats::new(0.7, 0.2)?, TestStats::new(0.9, 0.4)?]),
    ])?;
    let pol = opportunity_ratio(&pl, RatioPolicyKind::FirstStage)?;
    let ev = evaluate(&pl, &pol)?;
    let mc = monte_carlo(&pl, &pol, 200_000, 7)?;

    println!("recall    analytic {:.4}  simulated {:.4} ± {:.4}", ev.recall, mc.recall, mc.recall_se);
    println!(
        "precision analytic {:.4}  simulated {:.4} ± {:.4}",
        ev.precision_or_zero(),
        mc.precision.unwrap_or(0.0),
        mc.precision_se
    );
    for (a, s) in ev.groups.iter().zip(&mc.groups) {
        println!(
            "{}: tpr {:.4} vs {:.4} ± {:.4}, fpr {:.4} vs {:.4} ± {:.4}",
            a.id, a.tpr, s.tpr, s.tpr_se, a.fpr, s.fpr, s.fpr_se
        );
    }
    Ok(())
}
