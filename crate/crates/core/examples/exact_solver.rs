//! Exact optimization over structured policies for several objectives.

use fair_screen::exact::{config_count, solve_exact};
use fair_screen::repro::instances;
use fair_screen::Objective;

fn main() -> fair_screen::Result<()> {
    let pl = instances::or_suboptimal();
    println!("{} configurations", config_count(&pl));
    for obj in [
        Objective::linear(0.25),
        Objective::linear(0.5),
        Objective::precision(),
        Objective::reciprocal(0.5),
    ] {
        let r = solve_exact(&pl, &obj)?;
        println!(
            "{:<16} score {:.6}  recall {:.4}  precision {:.4}",
            obj.label(),
            r.score,
            r.evaluation.recall,
            r.evaluation.precision_or_zero()
        );
        for g in &r.policy.groups {
            let row: Vec<String> = g.stages.iter().map(|s| format!("({:.3}, {:.3})", s.pi1, s.pi0)).collect();
            println!("    {}: {}", g.id, row.join(" "));
        }
    }
    Ok(())
}
