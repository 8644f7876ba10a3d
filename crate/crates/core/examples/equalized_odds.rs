//! The precision ceiling under Equalized Odds and how far it can fall
//! below the Equal Opportunity ceiling.

use fair_screen::eodds::{eodds_precision_bound, gap_instance};
use fair_screen::oracle::{grid_search, Constraint, GridSpec};
use fair_screen::ratio::max_precision;
use fair_screen::Objective;

fn main() -> fair_screen::Result<()> {
    for k in 1..=3 {
        let pl = gap_instance(0.2, 0.3, 0.5, k, 3)?;
        let eo = max_precision(&pl);
        let b = eodds_precision_bound(&pl);
        println!("k={k}: EO ceiling {eo:.4}, EOdds ceiling {:.4}, ratio {:.3}", b.value, eo / b.value);
    }

    let pl = gap_instance(0.2, 0.3, 0.5, 1, 2)?;
    let spec = GridSpec::new(20, 1e-9)?;
    let best = grid_search(&pl, &Objective::precision(), &spec, Constraint::Eodds)?;
    println!(
        "best EOdds grid policy: precision {:.4} (bound {:.4})",
        best.evaluation.precision_or_zero(),
        eodds_precision_bound(&pl).value
    );
    Ok(())
}
