use egogaze::gaze_maps::{blur_map, density_from_fixations, fit_center_prior, FixationMap};
use ndarray::Array2;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_is_a_probability_map(
        points in prop::collection::vec((0.0f64..24.0, 0.0f64..18.0), 1..6),
        sigma in 0.3f64..6.0,
    ) {
        let fix = FixationMap::from_points(&points, 18, 24).unwrap();
        let d = density_from_fixations(&fix, sigma).unwrap();
        prop_assert!(d.grid().iter().all(|&v| v >= 0.0));
        prop_assert!((d.grid().sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blur_preserves_mass(values in prop::collection::vec(0.0f64..5.0, 12 * 9), sigma in 0.2f64..4.0) {
        let map = Array2::from_shape_vec((9, 12), values).unwrap();
        let blurred = blur_map(&map, sigma).unwrap();
        prop_assert!((blurred.sum() - map.sum()).abs() < 1e-6 * map.sum().max(1.0));
    }

    #[test]
    fn fitted_prior_is_normalized_and_centered_on_mean(
        points in prop::collection::vec((5.0f64..27.0, 5.0f64..27.0), 2..30),
    ) {
        let prior = fit_center_prior(&points, 32, 32).unwrap();
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        prop_assert!((prior.mean()[0] - mx).abs() < 1e-9 && (prior.mean()[1] - my).abs() < 1e-9);
        prop_assert!((prior.grid().grid().sum() - 1.0).abs() < 1e-9);
    }
}
