use eqgan::heatmap::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Probability that one N(res/2, (res/3)^2) axis lands in [0, res), squared
/// for two independent axes.
fn analytic_acceptance(res: usize) -> f64 {
    let r = res as f64;
    let n = Normal::new(r / 2.0, r / 3.0).unwrap();
    let p = n.cdf(r) - n.cdf(0.0);
    p * p
}

#[test]
fn level0_acceptance_rate_matches_the_truncated_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for res in [32usize, 256] {
        let draws = 100_000;
        let accepted = (0..draws).filter(|_| sample_level0_center(res, &mut rng).is_ok()).count();
        let rate = accepted as f64 / draws as f64;
        let expected = analytic_acceptance(res);
        assert!((rate - expected).abs() < 0.01, "res {res}: rate {rate} vs {expected}");
    }
}

#[test]
fn child_offsets_have_pixel_std_of_a_sixth_of_the_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for res in [32usize, 64] {
        let offsets = sample_child_offsets(res, 50_000, &mut rng);
        let to_px = (res as f64 - 1.0) / 2.0;
        for axis in 0..2 {
            let v: Vec<f64> = offsets.iter().map(|o| if axis == 0 { o.0 } else { o.1 } * to_px).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
            let want = res as f64 / 6.0;
            assert!((std / want - 1.0).abs() < 0.03, "res {res} axis {axis}: std {std} vs {want}");
        }
    }
}

#[test]
fn variance_schedule_halves_every_two_levels() {
    for var0 in [0.5, 0.1, 3.0] {
        let v = level_variances(var0);
        assert_eq!(v[0], var0);
        assert!((v[1] - var0 * 2f64.powf(-0.5)).abs() <= 1e-15 * var0);
        assert!((v[2] - var0 / 2.0).abs() <= 1e-15 * var0);
    }
}

#[test]
fn bump_peaks_at_the_nearest_cell() {
    let res = 8;
    let c = Coord2D::normalized(0.3, -0.55);
    let bump = gaussian_bump(res, c, 0.2).unwrap();
    let argmax = (0..bump.len()).max_by(|&a, &b| bump[a].total_cmp(&bump[b])).unwrap();
    let nearest = |v: f64| (0..res).min_by(|&a, &b| (grid_coord(a, res) - v).abs().total_cmp(&(grid_coord(b, res) - v).abs())).unwrap();
    assert_eq!(argmax, nearest(0.3) * res + nearest(-0.55));
}

#[test]
fn moving_the_anchor_moves_every_child_by_the_same_delta() {
    let spec = HeatmapSpec::default();
    let p = HeatmapPyramid::sample_seeded(32, &spec, 4).unwrap();
    let q = p.shifted(0.1, -0.2).unwrap();
    for (a, b) in p.centers().iter().flatten().zip(q.centers().iter().flatten()) {
        assert!((b.y - a.y - 0.1).abs() < 1e-12 && (b.x - a.x + 0.2).abs() < 1e-12);
    }
    // children are placed from the anchor, so re-placing with the same
    // offsets from a moved anchor gives the same result
    let offsets = [(0.1, 0.2), (-0.3, 0.05)];
    let a = Coord2D::normalized(0.0, 0.0);
    let moved = place_children(a.offset(0.25, 0.5), &offsets);
    for (m, o) in moved.iter().zip(place_children(a, &offsets)) {
        assert!((m.y - o.y - 0.25).abs() < 1e-12 && (m.x - o.x - 0.5).abs() < 1e-12);
    }
}

#[test]
fn independent_levels_do_not_share_an_anchor() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut far = 0;
    for _ in 0..200 {
        let lv = sample_independent_centers(32, [1, 2, 4], &mut rng).unwrap();
        let m1 = lv[1].iter().map(|c| c.x).sum::<f64>() / 2.0;
        if (m1 - lv[0][0].x).abs() > 0.5 {
            far += 1;
        }
    }
    assert!(far > 20, "only {far} of 200 level-1 groups far from the level-0 center");
}

#[test]
fn spatial_batch_targets_are_clipped_level_sums() {
    let spec = HeatmapSpec::default();
    let pyramids: Vec<_> = (0..3).map(|s| HeatmapPyramid::sample_seeded(32, &spec, s).unwrap()).collect();
    let batch = SpatialBatch::from_pyramids(&pyramids).unwrap();
    for (l, t) in batch.targets.iter().enumerate() {
        let plane = LEVEL_RESOLUTIONS[l] * LEVEL_RESOLUTIONS[l];
        for (i, p) in pyramids.iter().enumerate() {
            let want: Vec<f64> = level_sum(&p.levels[l]).iter().map(|v| v.clamp(0.0, 1.0)).collect();
            assert_eq!(&t.data()[i * plane..(i + 1) * plane], &want[..]);
        }
    }
    let picked = batch.select(&[2, 0, 2]);
    assert_eq!(picked.centers, vec![batch.centers[2], batch.centers[0], batch.centers[2]]);
}

#[test]
fn noise_batches_have_the_pyramid_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = SpatialBatch::draw(HeatmapMode::GaussianNoise, 5, 32, &HeatmapSpec::default(), &mut rng).unwrap();
    for (l, m) in b.maps.iter().enumerate() {
        let r = LEVEL_RESOLUTIONS[l];
        assert_eq!(m.shape(), &[5, DEFAULT_COUNTS[l], r, r]);
        assert!(b.targets[l].data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(b.centers.iter().all(Option::is_none));
}

proptest! {
    #[test]
    fn bump_values_lie_in_the_half_open_unit_interval(
        y in -1.2f64..1.2, x in -1.2f64..1.2, var in 0.01f64..4.0, res in 2usize..20,
    ) {
        let b = gaussian_bump(res, Coord2D::normalized(y, x), var).unwrap();
        prop_assert!(b.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn accepted_centers_are_in_frame(seed in any::<u64>(), res in 4usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = sample_level0_center_bounded(res, &mut rng, MAX_LEVEL0_TRIES).unwrap();
        // pixel acceptance is [0, res) while normalization divides by
        // res - 1, so the top pixel row maps slightly past +1
        let bound = 1.0 + 2.0 / (res as f64 - 1.0);
        prop_assert!(c.y >= -1.0 && c.y < bound && c.x >= -1.0 && c.x < bound);
        let p = c.to_pixel(res);
        let r = res as f64 + 1e-9;
        prop_assert!(p.y >= -1e-9 && p.y < r && p.x >= -1e-9 && p.x < r);
    }

    #[test]
    fn pixel_normalized_round_trip(v in 0.0f64..255.0, res in 2usize..512) {
        prop_assert!((norm_to_pixel(pixel_to_norm(v, res), res) - v).abs() < 1e-9);
    }

    #[test]
    fn records_re_render_identically(seed in any::<u64>()) {
        let p = HeatmapPyramid::sample_seeded(32, &HeatmapSpec::default(), seed).unwrap();
        prop_assert_eq!(HeatmapPyramid::from_record(&p.to_record()).unwrap(), p);
    }
}
