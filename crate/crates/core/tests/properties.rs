mod common;

use fair_screen::exact::solve_exact;
use fair_screen::fairness::{check_eo, Scope};
use fair_screen::fptas::{
    build_table, build_table_with, eps_bar, f_bounds, solve_fptas_f, solve_fptas_g, stage_feasible, DpMode, Grid,
};
use fair_screen::groupblind::{minimize_linear, solve_groupblind, HalfPlane};
use fair_screen::model::{stage_rates, trajectory};
use fair_screen::oracle::{monte_carlo, structured_grid_search};
use fair_screen::ratio::{max_precision, opportunity_ratio, two_approx, RatioPolicyKind};
use fair_screen::{evaluate, Objective, Pipeline, Policy, StagePolicy, TestStats};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pipeline(k_max: usize, n_max: usize) -> impl Strategy<Value = Pipeline> {
    any::<u64>().prop_map(move |s| common::random_pipeline(&mut ChaCha8Rng::seed_from_u64(s), k_max, n_max))
}

fn with_policy(k_max: usize, n_max: usize) -> impl Strategy<Value = (Pipeline, Policy)> {
    any::<u64>().prop_map(move |s| {
        let mut r = ChaCha8Rng::seed_from_u64(s);
        let pl = common::random_pipeline(&mut r, k_max, n_max);
        let pol = common::random_policy(&mut r, &pl);
        (pl, pol)
    })
}

fn test_stats() -> impl Strategy<Value = TestStats> {
    (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(a, b)| TestStats::weak(a.max(b), a.min(b)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rates_are_stage_products((pl, pol) in with_policy(3, 3)) {
        let ev = evaluate(&pl, &pol).unwrap();
        for ((g, row), r) in pl.groups().iter().zip(pol.aligned(&pl).unwrap()).zip(&ev.groups) {
            let (t, f) = g.stages.iter().zip(row).fold((1.0, 1.0), |(t, f), (&ts, &p)| {
                let (a, b) = stage_rates(ts, p);
                (t * a, f * b)
            });
            prop_assert!((t - r.tpr).abs() < 1e-15 && (f - r.fpr).abs() < 1e-15);
            prop_assert!(r.fpr <= r.tpr + 1e-15 || row.iter().any(|p| p.pi0 > p.pi1));
        }
        let lo = ev.groups.iter().map(|g| g.tpr).fold(f64::INFINITY, f64::min);
        let hi = ev.groups.iter().map(|g| g.tpr).fold(0.0, f64::max);
        prop_assert!(ev.recall >= lo - 1e-12 && ev.recall <= hi + 1e-12);
        if let Some(p) = ev.precision {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        let traj = trajectory(&pl, &pol).unwrap();
        prop_assert_eq!(traj.len(), pl.k());
        for (x, g) in ev.groups.iter().enumerate() {
            prop_assert_eq!(traj[pl.k() - 1][x], (g.tpr, g.fpr));
        }
    }

    #[test]
    fn ratio_policies_are_fair_and_precision_optimal(pl in pipeline(3, 3)) {
        for kind in [RatioPolicyKind::FirstStage, RatioPolicyKind::PerStage] {
            let pol = opportunity_ratio(&pl, kind).unwrap();
            prop_assert!(check_eo(&pl, &pol, 1e-12, Scope::Final).unwrap().satisfied);
            let p = evaluate(&pl, &pol).unwrap().precision.unwrap();
            prop_assert!((p - max_precision(&pl)).abs() < 1e-9);
        }
        let per = opportunity_ratio(&pl, RatioPolicyKind::PerStage).unwrap();
        prop_assert!(check_eo(&pl, &per, 1e-12, Scope::PerStage).unwrap().satisfied);
    }

    #[test]
    fn fair_policies_never_beat_max_precision((pl, pol) in with_policy(3, 3)) {
        let fair = common::equalize(&pl, &pol);
        prop_assert!(check_eo(&pl, &fair, 1e-12, Scope::Final).unwrap().satisfied);
        let p = evaluate(&pl, &fair).unwrap().precision_or_zero();
        prop_assert!(p <= max_precision(&pl) + 1e-12);
    }

    #[test]
    fn first_stage_downscaling_scales_one_group((pl, pol) in with_policy(3, 3), c in 0.0..=1.0f64, pick in any::<usize>()) {
        let x = pick % pl.len();
        let mut rows: Vec<Vec<StagePolicy>> = pol.aligned(&pl).unwrap().into_iter().map(|r| r.to_vec()).collect();
        rows[x][0] = StagePolicy::new(rows[x][0].pi1 * c, rows[x][0].pi0 * c).unwrap();
        let scaled = Policy::from_rows(&pl, rows).unwrap();
        let (a, b) = (evaluate(&pl, &pol).unwrap(), evaluate(&pl, &scaled).unwrap());
        for (y, (ra, rb)) in a.groups.iter().zip(&b.groups).enumerate() {
            let c = if y == x { c } else { 1.0 };
            prop_assert!((rb.tpr - c * ra.tpr).abs() < 1e-15 && (rb.fpr - c * ra.fpr).abs() < 1e-15);
            prop_assert!(rb.tpr <= ra.tpr && rb.fpr <= ra.fpr);
        }
    }

    #[test]
    fn stage_feasible_returns_min_fpr_witness(t in test_stats(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let cheapest = (0..=200)
            .flat_map(|i| (0..=200).map(move |j| (i as f64 / 200.0, j as f64 / 200.0)))
            .filter(|&(x, y)| t.tau1 * x + (1.0 - t.tau1) * y >= a)
            .map(|(x, y)| t.tau0 * x + (1.0 - t.tau0) * y)
            .fold(f64::INFINITY, f64::min);
        match stage_feasible(t, a, b) {
            Some((x, y)) => {
                let (tpr, fpr) = stage_rates(t, StagePolicy::new(x, y).unwrap());
                prop_assert!(tpr >= a - 1e-12 && fpr <= b + 1e-12);
                prop_assert!(fpr <= cheapest + 1e-12);
            }
            // The grid can only be coarser than the true minimum.
            None => prop_assert!(cheapest > b - 1e-12 || a > 1.0),
        }
    }

    #[test]
    fn dp_tables_are_monotone_and_modes_agree(pl in pipeline(3, 1), eb in 0.08..0.2f64) {
        let grid = Grid::new(eb, 0.1, 0.05).unwrap();
        let g = &pl.groups()[0];
        let mono = build_table(g, &grid);
        let lit = build_table_with(g, &grid, DpMode::Literal);
        for i in 0..pl.k() {
            for j1 in 0..=grid.l_tpr {
                for j0 in 0..=grid.l_fpr {
                    prop_assert_eq!(mono.get(i, j1, j0), lit.get(i, j1, j0));
                    prop_assert_eq!(mono.parent(i, j1, j0), lit.parent(i, j1, j0));
                    if mono.get(i, j1, j0) {
                        if j1 < grid.l_tpr {
                            prop_assert!(mono.get(i, j1 + 1, j0));
                        }
                        if j0 > 0 {
                            prop_assert!(mono.get(i, j1, j0 - 1));
                        }
                        let row = mono.reconstruct_prefix(g, &grid, i, j1, j0).unwrap();
                        let rates = common::prefix_rates(g, &row);
                        let (t, f) = rates[i];
                        prop_assert!(t >= grid.value(j1) * (1.0 - 1e-9) && f <= grid.value(j0) * (1.0 + 1e-9) + 1e-15);
                    }
                }
            }
        }
    }

    /// Every prefix with tpr at least `L/(1-eps_bar)^(s-1)` after stage `s`
    /// is covered by a true cell within a factor `(1-eps_bar)^s`.
    #[test]
    fn planted_policies_are_covered(seed in any::<u64>(), eps in 0.1..0.3f64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let k = 1 + (seed % 3) as usize;
        let pl = common::random_pipeline_sized(&mut r, k, 1);
        let b = f_bounds(&pl, eps);
        let grid = Grid::new(eps_bar(&pl, eps), b.lower_tpr, b.lower_fpr).unwrap();
        let g = &pl.groups()[0];
        let table = build_table(g, &grid);
        let shrink = 1.0 - grid.eps_bar;
        for _ in 0..20 {
            let row: Vec<StagePolicy> = (0..k).map(|_| common::random_stage_policy(&mut r)).collect();
            for (i, &(t, f)) in common::prefix_rates(g, &row).iter().enumerate() {
                if t < grid.lower_tpr / shrink.powi(i as i32) {
                    continue;
                }
                let need_t = t * shrink.powi(i as i32 + 1);
                let need_f = (grid.lower_fpr.max(f) / shrink.powi(i as i32 + 1)).min(1.0);
                let covered = (0..=grid.l_tpr)
                    .filter(|&j1| grid.value(j1) >= need_t * (1.0 - 1e-12))
                    .any(|j1| table.max_fpr_index(i, j1).is_some_and(|j0| grid.value(j0) <= need_f * (1.0 + 1e-12)));
                prop_assert!(covered, "stage {} t={} f={}", i + 1, t, f);
            }
        }
    }

    #[test]
    fn minimize_linear_matches_grid_scan(
        planes in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 0..4),
        cost in (-1.0..1.0f64, -1.0..1.0f64),
    ) {
        let cons: Vec<HalfPlane> = planes.iter().map(|&(a, b, c)| HalfPlane { a, b, c }).collect();
        let steps = 400;
        let best = (0..=steps)
            .flat_map(|i| (0..=steps).map(move |j| (i as f64 / steps as f64, j as f64 / steps as f64)))
            .filter(|&(x, y)| cons.iter().all(|h| h.a * x + h.b * y <= h.c))
            .map(|(x, y)| cost.0 * x + cost.1 * y)
            .fold(f64::INFINITY, f64::min);
        match minimize_linear(&cons, cost) {
            Some((x, y)) => {
                prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
                prop_assert!(cons.iter().all(|h| h.a * x + h.b * y <= h.c + 1e-9));
                prop_assert!(cost.0 * x + cost.1 * y <= best + 1e-9);
            }
            None => prop_assert!(best == f64::INFINITY),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solver_ordering(pl in pipeline(2, 2), alpha in 0.05..0.95f64) {
        let f = Objective::linear(alpha);
        let exact = solve_exact(&pl, &f).unwrap();
        prop_assert!(check_eo(&pl, &exact.policy, 1e-9, Scope::Final).unwrap().satisfied);
        let structured = structured_grid_search(&pl, &f, 401).unwrap();
        prop_assert!(structured.score <= exact.score + 1e-9);
        let approx = two_approx(&pl, &f).unwrap();
        prop_assert!(approx.score <= exact.score + 1e-9 && 2.0 * approx.score >= exact.score - 1e-9);
        let eps = 0.2;
        let dp = solve_fptas_f(&pl, alpha, eps).unwrap();
        prop_assert!(check_eo(&pl, &dp.policy, 1e-9, Scope::Final).unwrap().satisfied);
        prop_assert!(dp.score <= exact.score + 1e-9 && dp.score >= (1.0 - eps) * exact.score - 1e-12);
        let g = Objective::reciprocal(alpha);
        let exact_g = solve_exact(&pl, &g).unwrap();
        let dp_g = solve_fptas_g(&pl, alpha, eps).unwrap();
        prop_assert!(dp_g.score >= exact_g.score - 1e-9 && dp_g.score <= (1.0 + eps) * exact_g.score + 1e-12);
    }

    #[test]
    fn group_blind_certificate_is_fair_bound(pl in pipeline(2, 2), alpha in 0.1..0.9f64) {
        let f = Objective::linear(alpha);
        let blind = solve_groupblind(&pl, &f, 0.25).unwrap();
        let rows = blind.policy.aligned(&pl).unwrap();
        prop_assert!(rows.windows(2).all(|w| w[0] == w[1]));
        prop_assert!(blind.score <= solve_exact(&pl, &f).unwrap().score + 1e-9);
    }

    #[test]
    fn monte_carlo_is_seeded((pl, pol) in with_policy(2, 2), seed in any::<u64>()) {
        let a = monte_carlo(&pl, &pol, 2000, seed).unwrap();
        let b = monte_carlo(&pl, &pol, 2000, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn policy_json_round_trips((pl, pol) in with_policy(3, 3)) {
        let text = serde_json::to_string(&pol).unwrap();
        let back: Policy = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &pol);
        prop_assert_eq!(evaluate(&pl, &back).unwrap(), evaluate(&pl, &pol).unwrap());
    }
}
