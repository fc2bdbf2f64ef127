//! Metrics suite: Fréchet distance identities, a sampled optimal-coupling
//! oracle, DI against a second implementation and on constant pools.

use std::collections::HashMap;

use anyhow::{ensure, Context, Result};
use eqgan::metrics::{disequilibrium_indicator, frechet_distance, FeatureStats};
use nalgebra::{DMatrix, DVector};
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

fn random_vec(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn sym_root(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt)) * e.eigenvectors.transpose()
}

/// Mean squared displacement of the map `x -> mb + T (x - ma)` over draws
/// of `N(ma, ca)`, after certifying that the map is the optimal coupling
/// onto `N(mb, cb)`: it pushes `ca` onto `cb` and `T` is symmetric positive
/// definite.
fn coupling_cost(ma: &DVector<f64>, ca: &DMatrix<f64>, mb: &DVector<f64>, cb: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let root_a = sym_root(ca);
    let inv_root_a = root_a.clone().try_inverse().context("singular covariance")?;
    let t = &inv_root_a * sym_root(&(&root_a * cb * &root_a)) * &inv_root_a;
    ensure!((&t * ca * &t - cb).abs().max() < 1e-9, "map does not push A onto B");
    ensure!((&t - t.transpose()).abs().max() < 1e-9, "map is not symmetric");
    ensure!(t.clone().symmetric_eigen().eigenvalues.iter().all(|&v| v > 0.0), "map is not positive definite");
    let l = ca.clone().cholesky().context("covariance not SPD")?.l();
    let mut total = 0.0;
    for _ in 0..n {
        let x = ma + &l * DVector::from_fn(ma.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        total += (&x - (mb + &t * (&x - ma))).norm_squared();
    }
    Ok(total / n as f64)
}

/// The library's draws, over a sparse swap table instead of a full index.
fn di_reference(real: &[f64], fake: &[f64], repeats: usize, k: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |pool: &[f64]| -> Vec<f64> {
        let mut moved: HashMap<usize, usize> = HashMap::new();
        (0..k)
            .map(|i| {
                let j = rng.gen_range(i..pool.len());
                let at_j = *moved.get(&j).unwrap_or(&j);
                let at_i = *moved.get(&i).unwrap_or(&i);
                moved.insert(j, at_i);
                pool[at_j]
            })
            .collect()
    };
    let mut total = 0.0;
    for _ in 0..repeats {
        let lo = draw(real).into_iter().fold(f64::INFINITY, f64::min);
        let hi = draw(fake).into_iter().fold(f64::NEG_INFINITY, f64::max);
        total += lo - hi;
    }
    total / repeats as f64
}

pub fn check() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1d);

    let mut self_gap = 0.0f64;
    for dim in [1, 4, 16, 64] {
        let s = stats(&random_vec(dim, &mut rng), &random_spd(dim, &mut rng));
        self_gap = self_gap.max(frechet_distance(&s, &s)?.abs());
    }
    ensure!(self_gap < 1e-6, "identical statistics at distance {self_gap:e}");

    // 1-D: (m1 - m2)^2 + (s1 - s2)^2
    let d1 = frechet_distance(&stats(&[0.5], &DMatrix::from_element(1, 1, 4.0)), &stats(&[-1.0], &DMatrix::from_element(1, 1, 0.25)))?;
    ensure!(d1 == 4.5, "1-D distance {d1} instead of 4.5");

    let mut asym = 0.0f64;
    for _ in 0..20 {
        let a = stats(&random_vec(6, &mut rng), &random_spd(6, &mut rng));
        let b = stats(&random_vec(6, &mut rng), &random_spd(6, &mut rng));
        let (ab, ba) = (frechet_distance(&a, &b)?, frechet_distance(&b, &a)?);
        asym = asym.max((ab - ba).abs() / ab.max(1.0));
    }
    ensure!(asym < 1e-8, "asymmetry {asym:e}");

    let mut worst_mc = 0.0f64;
    for _ in 0..3 {
        let (ca, cb) = (random_spd(4, &mut rng), random_spd(4, &mut rng));
        let (ma, mb) = (DVector::from_vec(random_vec(4, &mut rng)), DVector::from_vec(random_vec(4, &mut rng)));
        let sampled = coupling_cost(&ma, &ca, &mb, &cb, 200_000, &mut rng)?;
        let closed = frechet_distance(&stats(ma.as_slice(), &ca), &stats(mb.as_slice(), &cb))?;
        let rel = (sampled / closed - 1.0).abs();
        worst_mc = worst_mc.max(rel);
        ensure!(rel < 0.02, "coupling oracle {sampled:.4} vs closed form {closed:.4}");
    }

    for seed in [1u64, 2, 3] {
        let real: Vec<f64> = (0..5_000).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let fake: Vec<f64> = (0..4_000).map(|_| rng.gen_range(-4.0..1.0)).collect();
        let ours = disequilibrium_indicator(&real, &fake, 200, 64, seed)?.di_mean;
        let theirs = di_reference(&real, &fake, 200, 64, seed);
        ensure!(ours == theirs, "DI {ours} vs second implementation {theirs}");
    }

    for (r, f, gap) in [(0.3, 0.5, -0.2), (2.0, -1.5, 3.5), (-1.0, -4.25, 3.25)] {
        let di = disequilibrium_indicator(&[r; 300], &[f; 200], 50, 64, 9)?.di_mean;
        ensure!((di - gap).abs() < 1e-12, "constant pools {r}/{f}: DI {di} instead of {gap}");
    }
    Ok(format!(
        "self distance {self_gap:.1e}; 1-D case exact; asymmetry {asym:.1e}; coupling oracle within {:.2}%; DI exact vs reference and on constant pools",
        100.0 * worst_mc
    ))
}
