mod common;

use nalgebra::DMatrix;
use ncs_core::analysis::{self, CovarianceOutcome};
use ncs_core::linalg;
use ncs_core::riccati::{self, DEFAULT_MAX_ITER};
use ncs_core::NcsModel;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recursion_structure_holds(seed in any::<u64>(), p in 0.0f64..=1.0, horizon in 0usize..40) {
        let model = common::random_model(seed, p);
        let sol = riccati::backward_recursion(&model, horizon).unwrap();
        prop_assert_eq!(sol.z.len(), horizon + 2);
        prop_assert_eq!(sol.k.len(), horizon + 1);
        for k in 0..=horizon + 1 {
            let mix = &sol.z[k] * (1.0 - p) + &sol.x[k] * p;
            prop_assert!(common::rel_diff(&sol.psi[k], &mix) <= 1e-12);
            prop_assert!(linalg::is_psd(&sol.z[k]) && linalg::is_psd(&sol.x[k]));
        }
        for k in 0..=horizon {
            prop_assert!(linalg::is_pd(&sol.upsilon[k]) && linalg::is_pd(&sol.lambda[k]));
        }
    }

    #[test]
    fn no_drops_collapse_to_classical_recursion(seed in any::<u64>(), horizon in 0usize..60) {
        let model = common::random_model(seed, 0.0);
        let sol = riccati::backward_recursion(&model, horizon).unwrap();
        let oracle = common::lqr_recursion(&model, horizon);
        prop_assert_eq!(oracle.len(), sol.z.len());
        for (k, (z, p)) in sol.z.iter().zip(&oracle).enumerate() {
            prop_assert!(common::rel_diff(z, p) <= 1e-10, "k={}", k);
        }
    }

    #[test]
    fn solution_depends_only_on_steps_to_go(seed in any::<u64>(), p in 0.0f64..=1.0, shift in 1usize..15) {
        let model = common::random_model(seed, p);
        let long = riccati::backward_recursion(&model, 30).unwrap();
        let short = riccati::backward_recursion(&model, 30 - shift).unwrap();
        for k in shift..=31 {
            prop_assert!(common::rel_diff(&long.z[k], &short.z[k - shift]) <= 1e-12);
            prop_assert!(common::rel_diff(&long.x[k], &short.x[k - shift]) <= 1e-12);
        }
    }

    #[test]
    fn psi_zero_nondecreasing_in_horizon(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let model = common::random_model(seed, p);
        let sol = riccati::backward_recursion(&model, 80).unwrap();
        // Reading the sequence backwards in k is the same as growing N.
        for k in 0..=80 {
            let step = &sol.psi[k] - &sol.psi[k + 1];
            let scale = 1.0 + linalg::max_abs(&sol.psi[k]);
            prop_assert!(linalg::symmetric_eig_bounds(&step).0 >= -1e-10 * scale);
        }
    }

    #[test]
    fn cost_nondecreasing_in_drop_probability(seed in any::<u64>()) {
        let grid: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
        let model = common::random_model(seed, 0.0);
        let pts = analysis::cost_sweep(&model, 30, &grid).unwrap();
        let scale = pts.iter().map(|s| s.cost.abs()).fold(0.0, f64::max);
        for w in pts.windows(2) {
            prop_assert!(w[1].cost - w[0].cost >= -1e-9 * scale, "{:?}", w);
        }
    }

    #[test]
    fn stationary_solution_is_a_fixed_point(seed in any::<u64>(), p in 0.0f64..0.5) {
        let model = common::random_model(seed, p);
        let g = riccati::value_iteration(&model, 1e-11, DEFAULT_MAX_ITER).unwrap();
        let step = riccati::backward_step(&model, &g.z, &g.x).unwrap();
        prop_assert!(linalg::max_abs(&(&step.z - &g.z)) <= 1e-9);
        prop_assert!(linalg::max_abs(&(&step.x - &g.x)) <= 1e-9);
        prop_assert!(linalg::is_pd(&g.z) && linalg::is_pd(&g.psi));
    }
}

fn random_feedback(n: usize, entries: &[f64], target_radius: f64) -> DMatrix<f64> {
    let f = DMatrix::from_fn(n, n, |i, j| entries[i * n + j]);
    let rho = linalg::spectral_radius(&f).max(1e-3);
    f * (target_radius / rho)
}

fn random_pd(n: usize, entries: &[f64]) -> DMatrix<f64> {
    let c = DMatrix::from_fn(n, n, |i, j| entries[i * n + j]);
    &c * c.transpose() + DMatrix::identity(n, n) * 0.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn margin_below_one_gives_a_fixed_point(
        n in 1usize..=3,
        f_entries in prop::collection::vec(-1.0f64..1.0, 9),
        w_entries in prop::collection::vec(-1.0f64..1.0, 9),
        p in 0.05f64..0.95,
        margin in 0.1f64..0.97,
    ) {
        let f = random_feedback(n, &f_entries, margin / p.sqrt());
        let w = random_pd(n, &w_entries);
        let report = analysis::stability_from_feedback(&f, p, &w);
        prop_assert!(report.rho < 1.0 && report.converges);
        let sigma = report.sigma_infinity.unwrap();
        let image = (&f * &sigma * f.transpose() + &w) * p;
        prop_assert!(linalg::max_abs(&(&image - &sigma)) <= 1e-10 * (1.0 + linalg::max_abs(&sigma)));
        prop_assert!(linalg::is_psd(&sigma));
    }

    #[test]
    fn margin_at_or_above_one_diverges(
        n in 1usize..=3,
        f_entries in prop::collection::vec(-1.0f64..1.0, 9),
        w_entries in prop::collection::vec(-1.0f64..1.0, 9),
        p in 0.05f64..0.95,
        margin in 1.0f64..1.5,
    ) {
        let f = random_feedback(n, &f_entries, margin / p.sqrt());
        let w = random_pd(n, &w_entries);
        let report = analysis::stability_from_feedback(&f, p, &w);
        prop_assert!(report.rho >= 1.0 - 1e-9 && !report.converges);
        prop_assert!(report.sigma_infinity.is_none());

        let seq = analysis::covariance_recursion(&f, p, &w, &DMatrix::zeros(n, n), 400);
        let traces: Vec<f64> = seq.iter().map(|s| s.trace()).collect();
        // Eventually increasing: the tail never decreases.
        prop_assert!(traces[200..].windows(2).all(|t| t[1] >= t[0]));
        if margin > 1.05 {
            let outcome = analysis::covariance_limit(&f, p, &w, &DMatrix::zeros(n, n), 1_000_000);
            let diverged = matches!(outcome, CovarianceOutcome::Diverged { .. });
            prop_assert!(diverged);
        }
    }
}

#[test]
fn vehicle_margin_matches_error_dynamics() {
    let model = NcsModel::uav(0.5);
    let g = riccati::value_iteration(&model, riccati::DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let report = analysis::stability_margin(&model, &g);
    let f = analysis::error_dynamics(&model, &g);
    assert!((report.rho - 0.5f64.sqrt() * f[(0, 0)].abs()).abs() < 1e-12);
    assert!(report.converges);
    let closed = report.closed_loop_radius.unwrap();
    assert!(closed < 1.0, "closed loop radius {closed}");
}

#[test]
fn vehicle_cost_sweep_endpoints() {
    let model = NcsModel::uav(0.5);
    let pts = analysis::cost_sweep(&model, 100, &[1.0, 0.0]).unwrap();
    assert_eq!(pts[0].p, 0.0);
    // With every packet delivered the cost is the classical LQG value.
    let oracle = common::lqr_recursion(&model.with_p(0.0), 100);
    let classical = model.x0_mean[0] * oracle[0][(0, 0)] * model.x0_mean[0]
        + oracle[0][(0, 0)] * model.p0[(0, 0)]
        + (1..=101)
            .map(|k| oracle[k][(0, 0)] * model.q_omega[(0, 0)])
            .sum::<f64>();
    assert!((pts[0].cost - classical).abs() <= 1e-9 * classical);
    assert!(pts[1].cost > pts[0].cost);
}
