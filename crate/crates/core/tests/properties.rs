use partcount_core::density::{build_density_map, DensityMap, WindowPolicy};
use partcount_core::eval::{aggregate_counts, mae, rmse, Aggregation};
use partcount_core::geometry::{point_in_polygon, polygon_centroid};
use partcount_core::loss::{mismatch_loss, LossConfig, MismatchMode, ObjectMask};
use partcount_core::Point;
use proptest::prelude::*;

fn regular_polygon(cx: f64, cy: f64, r: f64, sides: usize, phase: f64) -> Vec<Point> {
    (0..sides)
        .map(|k| {
            let t = phase + core::f64::consts::TAU * k as f64 / sides as f64;
            Point::new(cx + r * t.cos(), cy + r * t.sin())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn convex_centroid_is_inside(
        cx in -500.0..500.0f64,
        cy in -500.0..500.0f64,
        r in 1.0..200.0f64,
        sides in 3usize..24,
        phase in 0.0..6.3f64,
        stretch in 0.2..5.0f64,
    ) {
        let poly: Vec<Point> = regular_polygon(0.0, 0.0, r, sides, phase)
            .into_iter()
            .map(|p| Point::new(cx + p.x * stretch, cy + p.y))
            .collect();
        let c = polygon_centroid(&poly).unwrap();
        prop_assert!(point_in_polygon(&poly, c), "{c:?} outside {poly:?}");
    }

    #[test]
    fn aggregation_is_ordered(views in prop::collection::vec(-50.0..100.0f64, 1..12)) {
        let lo = aggregate_counts(&views, Aggregation::Min).unwrap();
        let mid = aggregate_counts(&views, Aggregation::Mean).unwrap();
        let hi = aggregate_counts(&views, Aggregation::Max).unwrap();
        prop_assert!(lo <= mid && mid <= hi);
    }

    #[test]
    fn rmse_bounds_mae(pairs in prop::collection::vec((0.0..60.0f64, 0.0..60.0f64), 1..64)) {
        let (pred, gt): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (a, r) = (mae(&pred, &gt).unwrap(), rmse(&pred, &gt).unwrap());
        prop_assert!(r >= a - 1e-12, "rmse {r} < mae {a}");
    }

    #[test]
    fn density_sums_to_point_count(
        points in prop::collection::vec((0.0..96.0f64, 0.0..80.0f64), 0..30),
        fixed in prop::option::of(1.0..40.0f64),
    ) {
        let points: Vec<Point> = points.into_iter().map(|(x, y)| Point::new(x, y)).collect();
        let policy = fixed.map_or(WindowPolicy::default(), WindowPolicy::Fixed);
        let build = build_density_map(&points, 80, 96, policy).unwrap();
        prop_assert!((build.map.sum() - points.len() as f64).abs() <= 1e-6 * points.len().max(1) as f64);
        prop_assert!(build.map.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn soft_mismatch_grows_off_object(
        values in prop::collection::vec(0.0..1.0f64, 36),
        mask in prop::collection::vec(0u8..2, 36),
        pick in 0usize..36,
        bump in 1e-6..10.0f64,
    ) {
        let mask = ObjectMask { width: 6, height: 6, values: mask };
        let pred = DensityMap::from_raw(6, 6, values).unwrap();
        let soft = LossConfig { mismatch_mode: MismatchMode::Soft, ..LossConfig::default() };
        let base = mismatch_loss(&pred, &mask, &soft).unwrap();
        let mut bumped = pred.clone();
        bumped.values[pick] += bump;
        let after = mismatch_loss(&bumped, &mask, &soft).unwrap();
        if mask.values[pick] == 1 {
            prop_assert!(after > base);
        } else {
            prop_assert_eq!(after, base);
        }
    }
}
