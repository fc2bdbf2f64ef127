//! Alignment-loss suite: zero on identical maps, hard zero below tau,
//! bounded by the weight, monotone in tau and a finite-difference check of
//! the image gradient.

use anyhow::{ensure, Result};
use autograd::check::{max_relative_error, numerical_grad};
use autograd::{grad, Tensor};
use eqgan::layers::Parameterized;
use eqgan::losses::{alignment_from_maps, alignment_loss, AlignConfig};
use eqgan::nets::{Discriminator, DiscriminatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The default truncation threshold.
const TAU: f64 = 0.25;

fn maps(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Tensor {
    Tensor::from_vec((0..n * r * r).map(|_| rng.gen_range(0.0..=1.0)).collect(), &[n, r, r]).expect("sized")
}

fn constant(v: f64, r: usize) -> Tensor {
    Tensor::from_vec(vec![v; r * r], &[1, r, r]).expect("sized")
}

fn all_levels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Tensor> {
    [4, 8, 16].iter().map(|&r| maps(rng, n, r)).collect()
}

pub fn check() -> Result<String> {
    ensure!(AlignConfig::default().tau == TAU, "default tau is {}", AlignConfig::default().tau);
    let mut rng = ChaCha8Rng::seed_from_u64(0xa119);
    let cfg = |tau: f64, weight: f64| AlignConfig { tau, weight, levels: vec![0, 1, 2] };

    // identical maps
    for _ in 0..20 {
        let a = all_levels(&mut rng, 3);
        let out = alignment_from_maps(&a, &a, &cfg(0.0, 1.0))?;
        ensure!(out.loss.item() == 0.0, "identical maps give {}", out.loss.item());
    }

    // distances strictly below tau contribute nothing; tau itself counts
    let one = AlignConfig { tau: TAU, weight: 1.0, levels: vec![0] };
    for d in [0.0, 0.1, 0.2, 0.249, 0.2499999] {
        let out = alignment_from_maps(&[constant(0.25 + d, 4)], &[constant(0.25, 4)], &one)?;
        ensure!(out.loss.item() == 0.0 && out.kept == 0, "distance {d} below tau gave {}", out.loss.item());
    }
    let at = alignment_from_maps(&[constant(0.5, 4)], &[constant(0.25, 4)], &one)?;
    ensure!(at.loss.item() == 0.25 && at.kept == 1, "distance exactly tau gave {}", at.loss.item());

    // 0 <= loss <= weight, and raising tau never raises the loss
    for _ in 0..300 {
        let (a, b) = (all_levels(&mut rng, 4), all_levels(&mut rng, 4));
        let weight = rng.gen_range(0.0..5.0);
        let t1 = rng.gen_range(0.0..0.6);
        let t2 = t1 + rng.gen_range(0.0..0.4);
        let lo = alignment_from_maps(&a, &b, &cfg(t1, weight))?.loss.item();
        let hi = alignment_from_maps(&a, &b, &cfg(t2, weight))?.loss.item();
        ensure!((0.0..=weight + 1e-12).contains(&lo), "loss {lo} outside [0, {weight}]");
        ensure!(hi <= lo, "tau {t1} -> {t2} raised the loss {lo} -> {hi}");
    }

    // image gradient through a real discriminator, above tau
    let d = Discriminator::new(DiscriminatorSpec { in_ch: 1, base_res: 16, channels: vec![3, 4, 4] }, 4)?;
    let frozen = d.frozen();
    let data: Vec<f64> = (0..2 * 256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets = all_levels(&mut rng, 2);
    let config = AlignConfig::default();
    let x = Tensor::param(data.clone(), &[2, 1, 16, 16])?;
    let out = alignment_loss(&frozen, &x, &targets, &config)?;
    ensure!(out.kept == 2, "samples should sit above tau: {:?}", out.per_sample);
    let analytic = grad(&out.loss, &[&x], false).remove(0);
    let f = |v: &[f64]| {
        let x = Tensor::from_vec(v.to_vec(), &[2, 1, 16, 16]).expect("sized");
        alignment_loss(&frozen, &x, &targets, &config).expect("loss").loss.item()
    };
    let err = max_relative_error(analytic.data(), &numerical_grad(f, &data, 1e-6), 1e-4);
    ensure!(err < 1e-3, "image gradient rel err {err:e}");
    Ok(format!("zero on identical maps; hard zero below tau {TAU}; 300 random cases bounded and monotone; grad rel err {err:.1e}"))
}
