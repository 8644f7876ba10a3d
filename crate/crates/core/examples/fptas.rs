//! The approximation scheme at several accuracies, compared against the
//! exact optimum, plus a look at one group's DP table.

use fair_screen::exact::solve_exact;
use fair_screen::fptas::{build_table, eps_bar, f_bounds, solve_fptas_f, Grid};
use fair_screen::{Group, Objective, Pipeline, TestStats};

fn main() -> fair_screen::Result<()> {
    let pl = Pipeline::new(vec![
        Group::new("A", 0.2, 0.3, vec![TestStats::new(0.9, 0.3)?, TestStats::new(0.8, 0.2)?]),
        Group::new("B", 0.15, 0.35, vec![TestStats::new(0.7, 0.2)?, TestStats::new(0.85, 0.4)?]),
    ])?;
    let alpha = 0.6;
    let exact = solve_exact(&pl, &Objective::linear(alpha))?.score;
    println!("exact optimum {exact:.6}");

    for eps in [0.3, 0.1, 0.05] {
        let r = solve_fptas_f(&pl, alpha, eps)?;
        println!(
            "eps {eps:<5} score {:.6}  ratio {:.4}  cells {}  updates {}",
            r.score,
            r.score / exact,
            r.diagnostics.dp_cells,
            r.diagnostics.cell_updates
        );
    }

    let eps = 0.1;
    let b = f_bounds(&pl, eps);
    let grid = Grid::new(eps_bar(&pl, eps), b.lower_tpr, b.lower_fpr)?;
    let table = build_table(&pl.groups()[0], &grid);
    let reachable = (0..=table.l_tpr).filter(|&j1| table.max_fpr_index(table.k - 1, j1).is_some()).count();
    println!("group A: {reachable} of {} tpr levels reachable after the last stage", table.l_tpr + 1);
    Ok(())
}
