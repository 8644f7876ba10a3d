//! Runs every built-in worked example and prints its checks.

use fair_screen::repro::{run, IDS};

fn main() {
    let mut failed = 0;
    for id in IDS {
        let r = run(id).expect("known id").expect("example runs");
        for c in &r.checks {
            println!("{} {id}: {} = {} (expected {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.actual, c.expected);
        }
        failed += usize::from(!r.passed());
    }
    std::process::exit(i32::from(failed > 0));
}
