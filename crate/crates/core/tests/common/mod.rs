#![allow(dead_code)]

use fair_screen::{Group, Pipeline, Policy, StagePolicy, TestStats};
use rand::Rng;

/// A strictly effective test; a tenth of draws hit `tau1 = 1` or `tau0 = 0`.
pub fn random_test(rng: &mut impl Rng) -> TestStats {
    let tau1 = if rng.gen_bool(0.1) { 1.0 } else { rng.gen_range(0.2..1.0) };
    let tau0 = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..0.9 * tau1) };
    TestStats::new(tau1, tau0).expect("strict by construction")
}

/// `k` stages, `n` groups named `G0..`, masses normalized to 1.
pub fn random_pipeline_sized(rng: &mut impl Rng, k: usize, n: usize) -> Pipeline {
    let raw: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0)))
        .collect();
    let total: f64 = raw.iter().map(|(q, u)| q + u).sum();
    let groups = raw
        .into_iter()
        .enumerate()
        .map(|(x, (q, u))| {
            let stages = (0..k).map(|_| random_test(rng)).collect();
            Group::new(format!("G{x}"), q / total, u / total, stages)
        })
        .collect();
    Pipeline::new(groups).expect("valid by construction")
}

pub fn random_pipeline(rng: &mut impl Rng, k_max: usize, n_max: usize) -> Pipeline {
    let k = rng.gen_range(1..=k_max);
    let n = rng.gen_range(1..=n_max);
    random_pipeline_sized(rng, k, n)
}

pub fn random_stage_policy(rng: &mut impl Rng) -> StagePolicy {
    StagePolicy::new(rng.gen(), rng.gen()).expect("unit draws")
}

pub fn random_policy(rng: &mut impl Rng, pl: &Pipeline) -> Policy {
    let rows = (0..pl.len())
        .map(|_| (0..pl.k()).map(|_| random_stage_policy(rng)).collect())
        .collect();
    Policy::from_rows(pl, rows).expect("shape")
}

/// Scales stage 1 of each group so every final tpr equals the smallest.
pub fn equalize(pl: &Pipeline, pol: &Policy) -> Policy {
    let ev = fair_screen::model::evaluate(pl, pol).expect("shape");
    let target = ev.groups.iter().map(|g| g.tpr).fold(f64::INFINITY, f64::min);
    let rows = pol
        .aligned(pl)
        .expect("shape")
        .into_iter()
        .zip(&ev.groups)
        .map(|(row, r)| {
            let mut row = row.to_vec();
            if r.tpr > 0.0 {
                let c = target / r.tpr;
                row[0] = StagePolicy::new(row[0].pi1 * c, row[0].pi0 * c).expect("scaled down");
            }
            row
        })
        .collect();
    Policy::from_rows(pl, rows).expect("shape")
}

/// Cumulative `(tpr, fpr)` after every stage of one group.
pub fn prefix_rates(g: &Group, row: &[StagePolicy]) -> Vec<(f64, f64)> {
    let (mut t, mut f) = (1.0, 1.0);
    g.stages
        .iter()
        .zip(row)
        .map(|(ts, p)| {
            t *= ts.tau1 * p.pi1 + (1.0 - ts.tau1) * p.pi0;
            f *= ts.tau0 * p.pi1 + (1.0 - ts.tau0) * p.pi0;
            (t, f)
        })
        .collect()
}
