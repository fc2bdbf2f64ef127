use std::collections::HashMap;

use autograd::Tensor;
use eqgan::data::{render_blob, BlobSpec};
use eqgan::metrics::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn stats(mean: &[f64], cov: &DMatrix<f64>) -> FeatureStats {
    FeatureStats { mean: mean.to_vec(), cov: cov.transpose().iter().cloned().collect(), count: 1000, regularized: false }
}

fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let l = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    &l * l.transpose() + DMatrix::identity(dim, dim) * 0.3
}

#[test]
fn identical_statistics_are_at_distance_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for dim in [1, 4, 16] {
        let c = random_spd(dim, &mut rng);
        let mean: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let s = stats(&mean, &c);
        assert!(frechet_distance(&s, &s).unwrap().abs() < 1e-6);
    }
}

#[test]
fn one_dimensional_distance_is_closed_form() {
    let a = stats(&[0.5], &DMatrix::from_element(1, 1, 4.0));
    let b = stats(&[-1.0], &DMatrix::from_element(1, 1, 0.25));
    // (0.5 + 1)^2 + (2 - 0.5)^2
    assert!((frechet_distance(&a, &b).unwrap() - 4.5).abs() < 1e-10);
}

#[test]
fn distance_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (ca, cb) = (random_spd(6, &mut rng), random_spd(6, &mut rng));
        let ma: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mb: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (stats(&ma, &ca), stats(&mb, &cb));
        let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
        assert!((ab - ba).abs() < 1e-8 * ab.max(1.0), "{ab} vs {ba}");
    }
}

#[test]
fn mismatched_dims_are_rejected() {
    let a = stats(&[0.0], &DMatrix::identity(1, 1));
    let b = stats(&[0.0, 0.0], &DMatrix::identity(2, 2));
    assert!(frechet_distance(&a, &b).is_err());
}

fn gaussian_samples(mean: &DVector<f64>, cov: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let l = cov.clone().cholesky().unwrap().l();
    (0..n)
        .map(|_| mean + &l * DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn sym_root(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt)) * e.eigenvectors.transpose()
}

fn two_gaussians() -> (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (ca, cb) = (random_spd(4, &mut rng), random_spd(4, &mut rng));
    let ma = DVector::from_vec(vec![0.5, -0.3, 0.0, 0.2]);
    let mb = DVector::from_vec(vec![-0.4, 0.6, 0.3, -0.1]);
    (ma, ca, mb, cb)
}

/// Builds the transport map `x -> mb + T (x - ma)` between two 4-D
/// Gaussians, certifies that it is an optimal coupling (it pushes A onto B
/// and T is symmetric positive definite, so it is the gradient of a convex
/// function), then estimates the transport cost by sampling.
#[test]
fn closed_form_matches_a_sampled_optimal_coupling() {
    let (ma, ca, mb, cb) = two_gaussians();
    let root_a = sym_root(&ca);
    let inv_root_a = root_a.clone().try_inverse().unwrap();
    let t = &inv_root_a * sym_root(&(&root_a * &cb * &root_a)) * &inv_root_a;
    let pushed = &t * &ca * &t;
    assert!((&pushed - &cb).abs().max() < 1e-9);
    assert!((&t - t.transpose()).abs().max() < 1e-9);
    assert!(t.clone().symmetric_eigen().eigenvalues.iter().all(|&v| v > 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 200_000;
    let cost = gaussian_samples(&ma, &ca, n, &mut rng)
        .iter()
        .map(|x| (x - (&mb + &t * (x - &ma))).norm_squared())
        .sum::<f64>()
        / n as f64;
    let closed = frechet_distance(&stats(ma.as_slice(), &ca), &stats(mb.as_slice(), &cb)).unwrap();
    assert!((cost / closed - 1.0).abs() < 0.02, "coupling {cost} vs closed form {closed}");
}

#[test]
fn sample_statistics_use_the_unbiased_covariance() {
    let rows = [1.0, 2.0, 3.0, 6.0, 5.0, 4.0];
    let s = FeatureStats::from_rows(&rows, 2).unwrap();
    assert_eq!(s.mean, vec![3.0, 4.0]);
    // x: 1,3,5 -> var 4; y: 2,6,4 -> var 4; cov (-2*-2 + 0 + 2*0)/2 = 2
    assert_eq!(s.cov, vec![4.0, 2.0, 2.0, 4.0]);
    assert!(!s.regularized && s.count == 3);
    let few = FeatureStats::from_rows(&rows, 3).unwrap();
    assert!(few.regularized);
    assert!(FeatureStats::from_rows(&rows[..3], 3).is_err());
}

/// The same draws as the library, written over a sparse swap table instead
/// of a materialized index.
fn di_reference(real: &[f64], fake: &[f64], repeats: usize, k: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |pool: &[f64]| -> Vec<f64> {
        let mut moved: HashMap<usize, usize> = HashMap::new();
        let mut picked = Vec::with_capacity(k);
        for i in 0..k {
            let j = rng.gen_range(i..pool.len());
            let at_j = *moved.get(&j).unwrap_or(&j);
            let at_i = *moved.get(&i).unwrap_or(&i);
            moved.insert(j, at_i);
            picked.push(pool[at_j]);
        }
        picked
    };
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for _ in 0..repeats {
        let r = draw(real);
        let f = draw(fake);
        lo.push(r.into_iter().fold(f64::INFINITY, f64::min));
        hi.push(f.into_iter().fold(f64::NEG_INFINITY, f64::max));
    }
    (lo, hi)
}

#[test]
fn disequilibrium_matches_a_second_implementation_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let real: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-2.0..3.0)).collect();
    let fake: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-4.0..1.0)).collect();
    let report = disequilibrium_indicator(&real, &fake, 20, 1000, 77).unwrap();
    let (lo, hi) = di_reference(&real, &fake, 20, 1000, 77);
    assert_eq!(report.min_real, lo);
    assert_eq!(report.max_fake, hi);
    let mean = lo.iter().zip(&hi).map(|(a, b)| a - b).sum::<f64>() / 20.0;
    assert_eq!(report.di_mean, mean);
}

#[test]
fn constant_pools_give_the_score_gap() {
    let r = disequilibrium_indicator(&[0.3; 50], &[0.5; 40], 7, 10, 1).unwrap();
    assert!((r.di_mean + 0.2).abs() < 1e-12);
    let r = disequilibrium_indicator(&[2.0; 50], &[-1.5; 40], 3, 40, 1).unwrap();
    assert!((r.di_mean - 3.5).abs() < 1e-12);
}

#[test]
fn small_pools_and_zero_repeats_are_rejected() {
    assert!(matches!(
        disequilibrium_indicator(&[0.0; 5], &[0.0; 100], 1, 10, 0),
        Err(eqgan::Error::PoolTooSmall { have: 5, need: 10 })
    ));
    assert!(disequilibrium_indicator(&[0.0; 5], &[0.0; 5], 0, 5, 0).is_err());
}

fn constant_images(n: usize, value: f64) -> Tensor {
    Tensor::from_vec(vec![value; n * 3 * 32 * 32], &[n, 3, 32, 32]).unwrap()
}

fn blob_images(n: usize, xs: std::ops::RangeInclusive<f64>, seed: u64) -> Tensor {
    let spec = BlobSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 3 * 1024);
    for _ in 0..n {
        let c = (rng.gen_range(6.0..=25.0), rng.gen_range(xs.clone()));
        let img = render_blob(&spec, c, &mut rng).unwrap();
        for _ in 0..3 {
            data.extend_from_slice(&img);
        }
    }
    Tensor::from_vec(data, &[n, 3, 32, 32]).unwrap()
}

#[test]
fn shipped_extractor_equals_the_seeded_construction() {
    let shipped = FeatureExtractor::shipped();
    let seeded = FeatureExtractor::seeded(3, EXTRACTOR_SEED);
    assert_eq!(shipped.convs.len(), seeded.convs.len());
    for (a, b) in shipped.convs.iter().zip(&seeded.convs) {
        assert_eq!(a.weight.shape(), b.weight.shape());
        assert_eq!(a.weight.data(), b.weight.data());
        assert_eq!(a.bias.data(), b.bias.data());
    }
}

#[test]
fn fid_of_a_set_with_itself_is_zero() {
    let ex = FeatureExtractor::shipped();
    let a = blob_images(200, 6.0..=25.0, 4);
    let r = fid_between_sets(&a, &a, &ex).unwrap();
    assert!(r.fid.abs() < 1e-6, "{}", r.fid);
    assert!(!r.regularized);
}

#[test]
fn fid_separates_different_constant_colors() {
    let ex = FeatureExtractor::shipped();
    let r = fid_between_sets(&constant_images(80, -0.5), &constant_images(80, 0.5), &ex).unwrap();
    assert!(r.fid > 0.0);
    let small = fid_between_sets(&constant_images(10, -0.5), &constant_images(10, 0.5), &ex).unwrap();
    assert!(small.regularized);
}

#[test]
fn fid_ranks_matching_blob_sets_closer_than_shifted_ones() {
    let ex = FeatureExtractor::shipped();
    let a = blob_images(300, 6.0..=25.0, 5);
    let b = blob_images(300, 6.0..=25.0, 6);
    let left = blob_images(300, 6.0..=12.0, 7);
    let right = blob_images(300, 19.0..=25.0, 8);
    let same = fid_between_sets(&a, &b, &ex).unwrap().fid;
    let split = fid_between_sets(&left, &right, &ex).unwrap().fid;
    assert!(same < split, "same {same} split {split}");
}

fn record(step: u64, lo: f64, hi: f64) -> MetricsRecord {
    MetricsRecord {
        step,
        loss_d: 1.0,
        loss_g: 0.5,
        l_align: 0.0,
        min_real: lo,
        max_fake: hi,
        di_mean: step.is_multiple_of(2).then_some(lo - hi),
        fid: None,
        config_hash: "abc".into(),
    }
}

#[test]
fn logbook_round_trips_and_feeds_the_score_curves() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    let records: Vec<MetricsRecord> = (0..5).map(|s| record(s * 10, -0.1 * s as f64, 0.2 + s as f64)).collect();
    let mut log = Logbook::create(&path).unwrap();
    for r in &records[..3] {
        log.write(r).unwrap();
    }
    drop(log);
    let mut log = Logbook::append_to(&path).unwrap();
    for r in &records[3..] {
        log.write(r).unwrap();
    }
    drop(log);
    let back: Vec<MetricsRecord> = read_log(&path).unwrap();
    assert_eq!(back, records);
    let curves = score_curves(&back);
    assert_eq!(curves.steps, vec![0, 10, 20, 30, 40]);
    assert_eq!(curves.min_real[4], -0.4);
    assert_eq!(curves.max_fake[1], 1.2);
    let svg = curves_svg(&curves, 400, 200);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn empty_log_gives_empty_curves() {
    let curves = score_curves(&[]);
    assert_eq!(curves, ScoreCurves::default());
    assert!(curves_svg(&curves, 100, 100).contains("</svg>"));
}

proptest! {
    #[test]
    fn disequilibrium_lies_between_the_pool_extremes(seed in any::<u64>(), k in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let real: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fake: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = disequilibrium_indicator(&real, &fake, 5, k, seed).unwrap();
        let lo = real.iter().cloned().fold(f64::INFINITY, f64::min) - fake.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let hi = real.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - fake.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(r.di_mean >= lo - 1e-12 && r.di_mean <= hi + 1e-12);
    }
}
