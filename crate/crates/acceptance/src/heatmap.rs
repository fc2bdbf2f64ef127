//! Heatmap suite: bump range and peak, variance schedule, level-0
//! acceptance rate and child-offset spread.

use anyhow::{ensure, Result};
use eqgan::heatmap::{gaussian_bump, grid_coord, level_variances, sample_child_offsets, sample_level0_center, Coord2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Probability that both axes of `N(res/2, (res/3)^2)` land in `[0, res)`.
fn analytic_acceptance(res: usize) -> f64 {
    let r = res as f64;
    let n = Normal::new(r / 2.0, r / 3.0).expect("valid normal");
    let p = n.cdf(r) - n.cdf(0.0);
    p * p
}

fn nearest_cell(v: f64, res: usize) -> usize {
    (0..res)
        .min_by(|&a, &b| (grid_coord(a, res) - v).abs().total_cmp(&(grid_coord(b, res) - v).abs()))
        .expect("res > 0")
}

pub fn check() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4ea7);

    // range (0, 1] and peak at the nearest cell, including off-frame centers
    for _ in 0..500 {
        let res = rng.gen_range(2..40);
        let (y, x) = (rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3));
        let var = rng.gen_range(0.01..4.0);
        let bump = gaussian_bump(res, Coord2D::normalized(y, x), var)?;
        ensure!(bump.iter().all(|&v| v > 0.0 && v <= 1.0), "bump value outside (0, 1] at res {res} var {var}");
        let argmax = (0..bump.len()).max_by(|&a, &b| bump[a].total_cmp(&bump[b])).expect("non-empty");
        let (ny, nx) = (nearest_cell(y, res), nearest_cell(x, res));
        ensure!(
            bump[argmax] == bump[ny * res + nx],
            "peak of the bump at ({y}, {x}) res {res} is not the nearest cell"
        );
    }
    let exact = gaussian_bump(9, Coord2D::normalized(0.25, -0.5), 0.3)?;
    ensure!(exact[5 * 9 + 2] == 1.0, "a center on a grid point peaks at exactly 1");

    // var_{l+1} = var_l / sqrt(2)
    let mut worst_ratio = 0.0f64;
    for var0 in [0.5, 0.1, 1.0, 3.7] {
        let v = level_variances(var0);
        for l in 0..2 {
            worst_ratio = worst_ratio.max((v[l] / v[l + 1] - 2f64.sqrt()).abs());
        }
    }
    ensure!(worst_ratio <= 1e-15, "variance ratio off sqrt(2) by {worst_ratio:e}");

    // level-0 acceptance over 1e5 draws
    let mut rates = Vec::new();
    for res in [32usize, 256] {
        let draws = 100_000;
        let accepted = (0..draws).filter(|_| sample_level0_center(res, &mut rng).is_ok()).count();
        let rate = accepted as f64 / draws as f64;
        let expected = analytic_acceptance(res);
        ensure!((rate - expected).abs() < 0.01, "res {res}: acceptance {rate:.4} vs analytic {expected:.4}");
        rates.push(format!("res {res} {rate:.4}/{expected:.4}"));
    }

    // child offsets: pixel std res/6 per axis within 3%
    let mut worst_std = 0.0f64;
    for res in [32usize, 64] {
        let offsets = sample_child_offsets(res, 50_000, &mut rng);
        let to_px = (res as f64 - 1.0) / 2.0;
        for axis in 0..2 {
            let v: Vec<f64> = offsets.iter().map(|o| if axis == 0 { o.0 } else { o.1 } * to_px).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
            let err = (std / (res as f64 / 6.0) - 1.0).abs();
            worst_std = worst_std.max(err);
            ensure!(err < 0.03, "res {res} axis {axis}: offset std {std:.3} vs {:.3}", res as f64 / 6.0);
        }
    }
    Ok(format!(
        "500 random bumps in (0,1] peaking at the nearest cell; variance ratio err {worst_ratio:.1e}; acceptance {}; offset std err {:.2}%",
        rates.join(", "),
        100.0 * worst_std
    ))
}
