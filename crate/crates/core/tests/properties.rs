use cplane::kernel::{kernel_section, ridge_solve};
use cplane::simulation::{accuracy_rate, isotonic_fit, rase};
use cplane::{gram_matrix, KernelModel, KernelSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sorted_grid() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(0u32..10_000, 2..25)
        .prop_map(|set| set.into_iter().map(|k| k as f64 / 10_000.0).collect())
}

#[test]
fn gram_examples() {
    let g = gram_matrix(&[0.0, 0.2], &KernelSpec::gaussian(0.2)).unwrap();
    assert!((g[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
    assert!((g[(0, 1)] - 0.606531).abs() < 1e-6);
    let model = KernelModel::new(&[0.0, 0.2], KernelSpec::gaussian(0.2)).unwrap();
    let sec = kernel_section(0.1, &model);
    assert!((sec[0] - (-0.125f64).exp()).abs() < 1e-15);
    assert!((sec[1] - (-0.125f64).exp()).abs() < 1e-15);
    let far = kernel_section(50.0, &model);
    assert!(far.iter().all(|&v| v < 1e-8));
    assert!(gram_matrix(&[0.0, 0.0, 1.0], &KernelSpec::gaussian(0.2)).is_err());
    assert!(gram_matrix(&[0.0, 1.0], &KernelSpec::gaussian(0.0)).is_err());
}

#[test]
fn ridge_solve_matches_explicit_inverse() {
    let mut rng = cplane::rng::substream(1, "spd", 0);
    for _ in 0..20 {
        let r = DMatrix::from_fn(5, 5, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let a = &r * r.transpose() + DMatrix::identity(5, 5) * 0.1;
        let b = DMatrix::from_fn(5, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let ridge = 0.05;
        let x = ridge_solve(&a, ridge, &b).unwrap();
        let oracle = (&a + DMatrix::identity(5, 5) * ridge).try_inverse().unwrap() * &b;
        assert!((&x - &oracle).amax() <= 1e-8 * oracle.amax());
    }
    let b = DMatrix::from_column_slice(2, 1, &[3.0, -1.0]);
    assert_eq!(ridge_solve(&DMatrix::identity(2, 2), 0.0, &b).unwrap(), b);
    let x = ridge_solve(&DMatrix::zeros(2, 2), 4.0, &b).unwrap();
    assert!((x - &b / 4.0).amax() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gram_is_symmetric_psd_with_unit_diagonal(grid in sorted_grid(), nu in 0.01f64..2.0) {
        let g = gram_matrix(&grid, &KernelSpec::gaussian(nu)).unwrap();
        prop_assert_eq!(g.clone(), g.transpose());
        prop_assert!(g.diagonal().iter().all(|&v| v == 1.0));
        let min_ev = g.clone().symmetric_eigenvalues().min();
        prop_assert!(min_ev >= -1e-10 * grid.len() as f64);
    }

    #[test]
    fn section_at_grid_point_is_gram_column(grid in sorted_grid(), nu in 0.05f64..1.0, pick in 0usize..100) {
        let model = KernelModel::new(&grid, KernelSpec::gaussian(nu)).unwrap();
        let j = pick % grid.len();
        let sec = kernel_section(grid[j], &model);
        prop_assert_eq!(sec, model.gram().column(j).into_owned());
    }

    #[test]
    fn accuracy_rate_is_symmetric(a in prop::collection::vec(any::<bool>(), 1..60), flips in prop::collection::vec(any::<bool>(), 60)) {
        let b: Vec<bool> = a.iter().zip(&flips).map(|(x, f)| x ^ f).collect();
        prop_assert_eq!(accuracy_rate(&a, &b), accuracy_rate(&b, &a));
        prop_assert_eq!(accuracy_rate(&a, &a), 1.0);
        let not_a: Vec<bool> = a.iter().map(|x| !x).collect();
        prop_assert_eq!(accuracy_rate(&a, &not_a), 0.0);
        let r = accuracy_rate(&a, &b);
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn rase_is_a_metric(
        x in prop::collection::vec(-5.0f64..5.0, 8),
        y in prop::collection::vec(-5.0f64..5.0, 8),
        z in prop::collection::vec(-5.0f64..5.0, 8),
        shift in -3.0f64..3.0,
    ) {
        prop_assert!(rase(&x, &y) >= 0.0);
        prop_assert_eq!(rase(&x, &x), 0.0);
        prop_assert!((rase(&x, &y) - rase(&y, &x)).abs() < 1e-15);
        prop_assert!(rase(&x, &z) <= rase(&x, &y) + rase(&y, &z) + 1e-12);
        let moved: Vec<f64> = x.iter().map(|v| v + shift).collect();
        prop_assert!((rase(&moved, &x) - shift.abs()).abs() < 1e-12);
    }

    #[test]
    fn isotonic_fit_is_monotone_and_mean_preserving(v in prop::collection::vec(-1.0f64..1.0, 1..30)) {
        let fit = isotonic_fit(&v);
        prop_assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-15));
        let (a, b): (f64, f64) = (v.iter().sum(), fit.iter().sum());
        prop_assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn rase_hand_value() {
    assert_eq!(rase(&[1.0, -1.0], &[0.0, 0.0]), 1.0);
    assert_eq!(accuracy_rate(&[true, true, false, false], &[true, false, false, false]), 0.75);
}
