use std::f64::consts::PI;
use std::sync::Arc;

use hj_lab::adjoint::{solve_fokker_planck_dual, DensityField};
use hj_lab::cell::{effective_hamiltonian, CellTemplate, DEFAULT_DELTAS};
use hj_lab::grid::{build_grid, sup_norm, Axis, Grid, ScalarField, Window};
use hj_lab::hamiltonians::{
    check_assumptions, demo_game, fully_nonlinear_demo, isaacs_lower, isaacs_upper, make_gamma_power, make_mechanical, make_quadratic, sample_cloud, shifted,
    SlowPart,
};
use hj_lab::hj::{solve, CauchyProblem, SolveOptions};
use hj_lab::rate::fit_order;
use hj_lab::transport::{w1_masses, wasserstein1_1d};
use proptest::prelude::*;

fn masses(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, n).prop_filter_map("zero mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-3).then(|| v.into_iter().map(|x| x / s).collect())
    })
}

fn line(n: usize) -> Arc<Grid> {
    Arc::new(Grid::new(vec![Axis::new(-1.0, 1.0, n).unwrap()], vec![], 1.0, 0.5).unwrap())
}

fn density(g: &Arc<Grid>, m: &[f64]) -> DensityField {
    let w = g.weights();
    DensityField::new(g.clone(), 0.0, m.iter().zip(&w).map(|(a, w)| a / w).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_is_a_metric(a in masses(24), b in masses(24), c in masses(24)) {
        let g = line(24);
        let (da, db, dc) = (density(&g, &a), density(&g, &b), density(&g, &c));
        let ab = wasserstein1_1d(&da, &db).unwrap();
        prop_assert_eq!(ab, wasserstein1_1d(&db, &da).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(wasserstein1_1d(&da, &da).unwrap(), 0.0);
        let ac = wasserstein1_1d(&da, &dc).unwrap();
        let cb = wasserstein1_1d(&dc, &db).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn w1_of_a_shift_is_the_shift(s in 1usize..10, m in masses(10)) {
        // moving every mass s nodes to the right costs s*h per unit mass
        let nodes: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let mut a = vec![0.0; 20];
        let mut b = vec![0.0; 20];
        for (i, v) in m.iter().enumerate() {
            a[i] = *v;
            b[i + s] = *v;
        }
        let w = w1_masses(&nodes, &a, &b).unwrap();
        prop_assert!((w - s as f64 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_power_laws(slope in 0.1..2.0f64, c in 0.01..10.0f64) {
        let pts: Vec<(f64, f64)> = [0.4f64, 0.2, 0.1, 0.05].iter().map(|e| (*e, c * e.powf(slope))).collect();
        let f = fit_order(&pts).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-10);
        prop_assert!(f.r2 > 1.0 - 1e-10);
    }

    #[test]
    fn axes_respect_their_invariants(lo in -10.0..10.0f64, w in 1e-3..10.0f64, n in 0usize..50) {
        let r = Axis::new(lo, lo + w, n);
        if n < 3 {
            prop_assert!(r.is_err());
        } else {
            let a = r.unwrap();
            prop_assert!(a.spacing() > 0.0);
            prop_assert!((a.node(n - 1) - (lo + w)).abs() < 1e-12 * (1.0 + lo.abs() + w));
        }
        prop_assert!(Axis::new(lo, lo, 5).is_err());
    }

    #[test]
    fn window_norms_grow_with_radius(r1 in 0.0..3.0f64, dr in 0.0..3.0f64, seed in 0u64..1000) {
        let g = Arc::new(build_grid(vec![Axis::new(-1.0, 1.0, 5).unwrap()], vec![Axis::new(-8.0, 8.0, 81).unwrap()], 1.0, 0.5).unwrap());
        let vals: Vec<f64> = (0..g.len()).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0 - 0.5).collect();
        let f = ScalarField::new(g.clone(), 0.0, vals).unwrap();
        let a = sup_norm(&f, Some(&Window::new(r1).unwrap())).unwrap();
        let b = sup_norm(&f, Some(&Window::new(r1 + dr).unwrap())).unwrap();
        prop_assert!(a <= b);
    }

    #[test]
    fn min_max_dominates_max_min(x in -2.0..2.0f64, y in -3.0..3.0f64, p in -3.0..3.0f64, q in -3.0..3.0f64) {
        let up = isaacs_upper(demo_game(7, false).unwrap(), 1, 1).unwrap();
        let lo = isaacs_lower(demo_game(7, false).unwrap(), 1, 1).unwrap();
        prop_assert!(up.eval(&[x], &[y], &[p], &[q]) >= lo.eval(&[x], &[y], &[p], &[q]) - 1e-14);
    }

    #[test]
    fn gamma_two_is_quadratic(x in -2.0..2.0f64, y in -3.0..3.0f64, p in -3.0..3.0f64, q in -3.0..3.0f64) {
        let g = make_gamma_power(SlowPart::kinetic(), 2.0).unwrap();
        let h = make_quadratic(SlowPart::kinetic());
        let (a, b) = (g.eval(&[x], &[y], &[p], &[q]), h.eval(&[x], &[y], &[p], &[q]));
        prop_assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
    }

    #[test]
    fn larger_c_h_never_breaks_assumptions(seed in 0u64..50, factor in 1.0..10.0f64) {
        let m = fully_nonlinear_demo();
        let cloud = sample_cloud(seed, 200, 1, 1, 3.0);
        let base = check_assumptions(&m, &cloud).unwrap();
        let big = check_assumptions(&m.clone().with_c_h(m.c_h * factor), &cloud).unwrap();
        prop_assert!(!base.h1.pass || big.h1.pass);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solutions_obey_the_maximum_principle(a in 0.0..1.0f64, b in 0.0..1.0f64, eps in 0.05..0.5f64) {
        let g = Arc::new(build_grid(vec![Axis::new(-PI, PI, 11).unwrap()], vec![Axis::new(-PI, PI, 41).unwrap()], 0.5, 0.5).unwrap());
        let pb = CauchyProblem::new(
            Arc::new(make_quadratic(SlowPart::kinetic())),
            eps,
            Arc::new(move |x: &[f64], y: &[f64]| a * x[0].sin() + b * (1.0 - y[0].cos())),
            0.0,
        )
        .unwrap();
        let u = solve(&pb, &g, &SolveOptions::every(1)).unwrap();
        let (lo, hi) = (u.first().min(), u.first().max());
        for f in &u.trajectory {
            prop_assert!(f.max() <= hi + 1e-12 && f.min() >= lo - 1e-12);
        }
    }

    #[test]
    fn dual_runs_keep_mass_and_sign(cx in -1.0..1.0f64, cy in -1.0..1.0f64, sigma in 0.0..0.02f64) {
        let g = Arc::new(build_grid(vec![Axis::new(-PI, PI, 21).unwrap()], vec![Axis::new(-PI, PI, 21).unwrap()], 0.5, 0.5).unwrap());
        let pb = CauchyProblem::new(
            Arc::new(make_quadratic(SlowPart::kinetic())),
            0.3,
            Arc::new(|x: &[f64], y: &[f64]| 0.5 * (1.0 - y[0].cos()) + 0.1 * (1.0 - x[0].cos())),
            sigma,
        )
        .unwrap();
        let u = solve(&pb, &g, &SolveOptions::every(1)).unwrap();
        let rho = DensityField::gaussian_bump(g.clone(), 0.5, &[cx, cy], 0.5).unwrap();
        let d = solve_fokker_planck_dual(&u, &rho, sigma, 0.0).unwrap();
        prop_assert!(d.mass_drift() <= 1e-8);
        prop_assert!(d.min_value() >= -1e-12);
        prop_assert!(d.trajectory.windows(2).all(|w| w[1].t < w[0].t));
    }

    #[test]
    fn effective_hamiltonian_shifts_with_the_model(c in -2.0..2.0f64, p in -1.0..1.0f64) {
        let m = Arc::new(make_mechanical(SlowPart::zero(), |y: &[f64]| -y[0].cos()));
        let fast = vec![Axis::new(-PI, PI, 61).unwrap()];
        let base = CellTemplate::new(m.clone(), fast.clone(), DEFAULT_DELTAS.to_vec()).unwrap();
        let moved = CellTemplate::new(Arc::new(shifted(&m, c)), fast, DEFAULT_DELTAS.to_vec()).unwrap();
        let a = effective_hamiltonian(&base.query(&[0.0], &[p]).unwrap()).unwrap().value;
        let b = effective_hamiltonian(&moved.query(&[0.0], &[p]).unwrap()).unwrap().value;
        prop_assert!((b - a - c).abs() <= 1e-6);
    }
}
