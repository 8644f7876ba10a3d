//! One shared policy for all groups, against the group-aware optimum.

use fair_screen::exact::solve_exact;
use fair_screen::groupblind::solve_groupblind;
use fair_screen::report::Certificate;
use fair_screen::repro::instances;
use fair_screen::{Group, Objective, Pipeline, TestStats};

fn main() -> fair_screen::Result<()> {
    // A perfect test for A is only half as sensitive for B, so a shared
    // policy must ignore it.
    let pl = instances::groupblind_bypass();
    let obj = Objective::linear(0.5);
    let blind = solve_groupblind(&pl, &obj, 0.1)?;
    let aware = solve_exact(&pl, &obj)?;
    let s = blind.policy.groups[0].stages[0];
    println!("shared stage policy ({:.3}, {:.3})", s.pi1, s.pi0);
    println!("f_0.5: group-blind {:.4}, group-aware {:.4}", blind.score, aware.score);

    // Tprs are only matched up to the grid band; the certificate records
    // the remaining gap and the exactly evaluated score.

    let t = [TestStats::new(0.9, 0.3)?, TestStats::new(0.8, 0.1)?];
    let pl = Pipeline::new(vec![
        Group::new("A", 0.2, 0.3, t.to_vec()),
        Group::new("B", 0.25, 0.25, vec![t[0], TestStats::new(0.7, 0.1)?]),
    ])?;
    let obj = Objective::linear(0.5);
    let blind = solve_groupblind(&pl, &obj, 0.3)?;
    let aware = solve_exact(&pl, &obj)?;
    println!("f_0.5: group-blind {:.4}, group-aware {:.4}", blind.score, aware.score);
    if let Certificate::Groupblind { evaluated_score, residual_gap, .. } = blind.certificate {
        println!("evaluated score {evaluated_score:.4}, residual tpr gap {residual_gap:.2e}");
    }
    Ok(())
}
