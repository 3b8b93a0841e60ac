use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use revealed::linalg;
use revealed::model::{extend, InformationStructure};
use revealed::projection::{
    min_feasible_kappa, minimize_pi, project_cone, project_linear, project_lse, ProjectionConfig, ProjectionMethod,
};
use revealed::simulate::rng_for;
use revealed::Error;
use revealed_testkit as oracle;

const TIGHT: f64 = 1e-12;

fn symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = rng.gen_range(-scale..scale);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// A noisy covariance-like estimate: diagonal in (0, 1), off-diagonals in
/// (−spread, spread).
fn unconstrained(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> DMatrix<f64> {
    let mut s = symmetric(rng, n, spread);
    for i in 0..n {
        s[(i, i)] = rng.gen_range(0.0..1.0);
    }
    s
}

fn tight(kappa: f64) -> ProjectionConfig {
    ProjectionConfig::new(kappa, TIGHT, 100_000).unwrap()
}

fn condition(m: &DMatrix<f64>) -> f64 {
    linalg::condition_number(m).unwrap()
}

#[test]
fn linear_projection_matches_affine_formula() {
    let mut rng = rng_for(11, 0);
    for trial in 0..100 {
        let n = 2 + trial % 9;
        let m = symmetric(&mut rng, n, 2.0);
        let ours = project_linear(&m).unwrap();
        let reference = oracle::affine_projection(&m);
        assert!((&ours - &reference).amax() < 1e-10, "n={n}");
    }
}

#[test]
fn cone_projection_matches_conic_solver() {
    let mut rng = rng_for(12, 0);
    for _ in 0..20 {
        let m = symmetric(&mut rng, 5, 1.0);
        let ours = project_cone(&m, 10.0).unwrap();
        let reference = oracle::cone_projection(&m, 10.0);
        assert!((&ours - &reference.omega).amax() < 1e-5);
    }
}

#[test]
fn minimize_pi_matches_grid_scan() {
    let mut rng = rng_for(13, 0);
    let step = 1e-6;
    for _ in 0..1_000 {
        let size = rng.gen_range(2..=50);
        let spectrum: Vec<f64> = (0..size).map(|_| rng.gen_range(-0.5..2.0)).collect();
        let kappa = rng.gen_range(1.0..200.0);
        let mu = minimize_pi(&spectrum, kappa);
        let (first, end) = oracle::pi_grid_scan(&spectrum, kappa, step);
        assert!(
            mu >= first - step && mu <= end + step,
            "mu={mu} outside [{first}, {end}] for kappa={kappa}"
        );
    }
}

#[test]
fn lse_matches_conic_solver_on_small_inputs() {
    let mut rng = rng_for(14, 0);
    for trial in 0..20 {
        let n = 1 + trial % 6;
        let s = unconstrained(&mut rng, n, 0.6);
        for kappa in [min_feasible_kappa(n) * 1.05, 50.0, 500.0] {
            let ours = project_lse(&s, &tight(kappa)).unwrap();
            let reference = oracle::bordered_projection(&s, kappa);
            let gap = (ours.distance_to(&s) - reference.distance).abs();
            assert!(gap < 1e-3, "n={n} kappa={kappa} gap={gap}");
        }
    }
}

#[test]
fn lse_matches_conic_solver_at_ten_forecasters() {
    let mut rng = rng_for(15, 0);
    for _ in 0..5 {
        let s = unconstrained(&mut rng, 10, 0.5);
        let ours = project_lse(&s, &tight(50.0)).unwrap();
        let reference = oracle::bordered_projection(&s, 50.0);
        assert!((ours.distance_to(&s) - reference.distance).abs() < 1e-3);
        assert!(condition(ours.omega.matrix()) <= 50.0 * (1.0 + 1e-6));
    }
}

#[test]
fn feasibility_threshold_agrees_with_solver() {
    let mut rng = rng_for(16, 0);
    for n in 1..=6 {
        let s = unconstrained(&mut rng, n, 0.5);
        let minimum = min_feasible_kappa(n);
        assert!(oracle::try_bordered_projection(&s, minimum * 1.01).is_ok(), "n={n}");
        assert!(oracle::try_bordered_projection(&s, minimum * 0.99).is_err(), "n={n}");
        assert!(project_lse(&s, &tight(minimum * 1.01)).is_ok());
        assert!(matches!(
            project_lse(&s, &tight(minimum * 0.99)),
            Err(Error::InfeasibleKappa { .. })
        ));
    }
}

#[test]
fn directional_method_reaches_the_feasible_set() {
    let mut rng = rng_for(17, 0);
    for _ in 0..10 {
        let s = unconstrained(&mut rng, 6, 0.5);
        let mut config = ProjectionConfig::with_kappa(50.0).unwrap();
        config.method = ProjectionMethod::Directional;
        let out = project_lse(&s, &config).unwrap();
        assert!(out.omega.pattern_residual() <= config.epsilon.sqrt());
        assert!(condition(out.omega.matrix()) <= 50.0 * (1.0 + 1e-6));
    }
}

#[test]
fn larger_kappa_never_moves_further() {
    let mut rng = rng_for(18, 0);
    for _ in 0..10 {
        let s = unconstrained(&mut rng, 5, 0.7);
        let grid = [10.0, 20.0, 40.0, 80.0, 160.0, 1e4];
        let distances: Vec<f64> = grid
            .iter()
            .map(|&k| project_lse(&s, &tight(k)).unwrap().distance_to(&s))
            .collect();
        for pair in distances.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6, "{distances:?}");
        }
    }
}

#[test]
fn feasible_input_is_returned_unchanged() {
    let s = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.25, 0.5]);
    let out = project_lse(&s, &ProjectionConfig::with_kappa(100.0).unwrap()).unwrap();
    assert_eq!(out.iterations, 1);
    assert!((out.sigma.matrix() - &s).amax() < 1e-6);
}

fn seeded() -> impl Strategy<Value = ChaCha8Rng> {
    any::<u64>().prop_map(|seed| rng_for(seed, 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn linear_projection_is_idempotent_and_nonexpansive(mut rng in seeded(), n in 2usize..9) {
        let a = symmetric(&mut rng, n, 2.0);
        let b = symmetric(&mut rng, n, 2.0);
        let pa = project_linear(&a).unwrap();
        let pb = project_linear(&b).unwrap();
        prop_assert!((project_linear(&pa).unwrap() - &pa).amax() < 1e-10);
        prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-10);
    }

    #[test]
    fn cone_projection_is_idempotent_and_nonexpansive(mut rng in seeded(), n in 2usize..9, kappa in 1.0f64..100.0) {
        let a = symmetric(&mut rng, n, 2.0);
        let b = symmetric(&mut rng, n, 2.0);
        let pa = project_cone(&a, kappa).unwrap();
        let pb = project_cone(&b, kappa).unwrap();
        prop_assert!((project_cone(&pa, kappa).unwrap() - &pa).amax() < 1e-10);
        prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-10);
    }

    #[test]
    fn lse_output_is_coherent_and_bounded(mut rng in seeded(), n in 1usize..12, spread in 0.05f64..1.5, kappa in 12.0f64..2000.0) {
        let s = unconstrained(&mut rng, n, spread);
        let out = project_lse(&s, &ProjectionConfig::with_kappa(kappa).unwrap()).unwrap();
        let h = extend(&out.sigma);
        prop_assert!(out.omega.pattern_residual() <= 1e-5f64.sqrt());
        prop_assert!(linalg::min_eigenvalue(h.matrix()).unwrap() >= -1e-8);
        prop_assert!(condition(h.matrix()) <= kappa + 1e-6);
        let delta = out.sigma.delta();
        prop_assert!(delta.iter().all(|&d| (-1e-8..=1.0 + 1e-8).contains(&d)));
    }

    #[test]
    fn lse_is_permutation_equivariant(mut rng in seeded(), n in 2usize..7) {
        let s = unconstrained(&mut rng, n, 0.5);
        let order: Vec<usize> = (0..n).rev().collect();
        let permuted = InformationStructure::new(s.clone()).unwrap().permute(&order);
        let a = project_lse(&s, &tight(50.0)).unwrap();
        let b = project_lse(permuted.matrix(), &tight(50.0)).unwrap();
        prop_assert!((a.sigma.permute(&order).matrix() - b.sigma.matrix()).amax() < 1e-4);
    }
}
