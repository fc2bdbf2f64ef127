use std::collections::BTreeMap;

use autograd::check::{max_relative_error, numerical_grad};
use autograd::{grad, Tensor};
use eqgan::losses::*;
use eqgan::nets::{Critic, CriticOutput, Discriminator, DiscriminatorSpec};
use eqgan::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn t(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec(), &[v.len()]).unwrap()
}

#[test]
fn adversarial_losses_at_zero_scores() {
    let (d, g) = adv_losses(&t(&[0.0, 0.0]), &t(&[0.0, 0.0, 0.0]));
    assert!((d.item() - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert!((g.item() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn discriminator_loss_vanishes_on_confident_scores() {
    let (d, _) = adv_losses(&t(&[20.0; 4]), &t(&[-20.0; 4]));
    assert!(d.item() < 1e-6);
}

#[test]
fn adversarial_losses_match_elementwise_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let real: Vec<f64> = (0..7).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let fake: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let (d, g) = adv_losses(&t(&real), &t(&fake));
    let want_d = real.iter().map(|&s| softplus(-s)).sum::<f64>() / 7.0 + fake.iter().map(|&s| softplus(s)).sum::<f64>() / 5.0;
    let want_g = fake.iter().map(|&s| softplus(-s)).sum::<f64>() / 5.0;
    assert!((d.item() - want_d).abs() < 1e-12);
    assert!((g.item() - want_g).abs() < 1e-12);
}

/// Score = sum of all pixels (times `scale`), or a constant.
struct SumCritic {
    scale: f64,
}

impl Critic for SumCritic {
    fn critique(&self, x: &Tensor) -> Result<CriticOutput> {
        let scores = x.sum_axes(&[1, 2, 3], false).scale(self.scale);
        Ok(CriticOutput { scores, taps: BTreeMap::new() })
    }
}

#[test]
fn r1_of_a_pixel_sum_critic_is_half_the_pixel_count() {
    let x = Tensor::from_vec(vec![0.3; 3 * 2 * 4 * 4], &[3, 2, 4, 4]).unwrap();
    let r1 = r1_penalty(&SumCritic { scale: 1.0 }, &x, 1.0).unwrap();
    assert!((r1.item() - 16.0).abs() < 1e-12);
    let flat = r1_penalty(&SumCritic { scale: 0.0 }, &x, 1.0).unwrap();
    assert_eq!(flat.item(), 0.0);
    assert!(r1_penalty(&SumCritic { scale: 1.0 }, &x, -1.0).is_err());
}

fn small_discriminator(seed: u64) -> Discriminator {
    Discriminator::new(DiscriminatorSpec { in_ch: 1, base_res: 16, channels: vec![3, 4, 4] }, seed).unwrap()
}

#[test]
fn r1_matches_a_finite_difference_gradient_norm() {
    let d = small_discriminator(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f64> = (0..2 * 256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(data.clone(), &[2, 1, 16, 16]).unwrap();
    let gamma = 0.7;
    let r1 = r1_penalty(&d, &x, gamma).unwrap().item();
    let score_sum = |v: &[f64]| d.score(&Tensor::from_vec(v.to_vec(), &[2, 1, 16, 16]).unwrap()).unwrap().sum().item();
    let g = numerical_grad(score_sum, &data, 1e-6);
    let want = gamma / 2.0 * g.iter().map(|v| v * v).sum::<f64>() / 2.0;
    assert!((r1 - want).abs() / want < 1e-3, "{r1} vs {want}");
}

fn maps(v: f64, n: usize, r: usize) -> Tensor {
    Tensor::from_vec(vec![v; n * r * r], &[n, r, r]).unwrap()
}

#[test]
fn identical_maps_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = Tensor::from_vec((0..2 * 16).map(|_| rng.gen_range(0.0..1.0)).collect(), &[2, 4, 4]).unwrap();
    let out = alignment_from_maps(std::slice::from_ref(&a), std::slice::from_ref(&a), &AlignConfig { tau: 0.0, weight: 1.0, levels: vec![0] }).unwrap();
    assert_eq!(out.loss.item(), 0.0);
}

#[test]
fn truncation_zeroes_strictly_below_tau_and_keeps_the_boundary() {
    let cfg = AlignConfig { tau: 0.25, weight: 1.0, levels: vec![0] };
    let below = alignment_from_maps(&[maps(0.45, 1, 4)], &[maps(0.25, 1, 4)], &cfg).unwrap();
    assert!((below.per_sample[0] - 0.2).abs() < 1e-12);
    assert_eq!(below.loss.item(), 0.0);
    assert_eq!(below.kept, 0);
    let at = alignment_from_maps(&[maps(0.5, 1, 4)], &[maps(0.25, 1, 4)], &cfg).unwrap();
    assert_eq!(at.loss.item(), 0.25);
    assert_eq!(at.kept, 1);
}

#[test]
fn levels_are_averaged_and_the_weight_scales() {
    let cfg = AlignConfig { tau: 0.0, weight: 2.0, levels: vec![0, 1] };
    let out = alignment_from_maps(&[maps(1.0, 1, 4), maps(0.5, 1, 8)], &[maps(0.0, 1, 4), maps(0.0, 1, 8)], &cfg).unwrap();
    assert!((out.value - 0.75).abs() < 1e-12);
    assert!((out.loss.item() - 1.5).abs() < 1e-12);
}

#[test]
fn missing_tap_is_reported() {
    let d = small_discriminator(3);
    let x = Tensor::zeros(&[1, 1, 16, 16]);
    let targets = vec![maps(0.0, 1, 4), maps(0.0, 1, 8), maps(0.0, 1, 16)];
    let cfg = AlignConfig { tau: 0.0, weight: 1.0, levels: vec![0, 1, 2] };
    assert!(alignment_loss(&d, &x, &targets, &cfg).is_ok());
    let mut taps = d.critique(&x).unwrap().taps;
    taps.remove("d8");
    let out = alignment_from_output(&CriticOutput { scores: Tensor::zeros(&[1]), taps }, &targets, &cfg);
    assert!(matches!(out, Err(eqgan::Error::MissingTapForLevel(8))));
}

#[test]
fn image_gradient_matches_central_differences_above_tau() {
    let d = small_discriminator(4);
    let frozen = eqgan::layers::Parameterized::frozen(&d);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<f64> = (0..2 * 256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets: Vec<Tensor> = [4usize, 8, 16]
        .iter()
        .map(|&r| Tensor::from_vec((0..2 * r * r).map(|_| rng.gen_range(0.0..1.0)).collect(), &[2, r, r]).unwrap())
        .collect();
    let cfg = AlignConfig::default();
    let x = Tensor::param(data.clone(), &[2, 1, 16, 16]).unwrap();
    let out = alignment_loss(&frozen, &x, &targets, &cfg).unwrap();
    assert_eq!(out.kept, 2, "both samples should be above tau: {:?}", out.per_sample);
    let analytic = grad(&out.loss, &[&x], false).remove(0);
    let f = |v: &[f64]| {
        let x = Tensor::from_vec(v.to_vec(), &[2, 1, 16, 16]).unwrap();
        alignment_loss(&frozen, &x, &targets, &cfg).unwrap().loss.item()
    };
    let numeric = numerical_grad(f, &data, 1e-6);
    let err = max_relative_error(analytic.data(), &numeric, 1e-4);
    assert!(err < 1e-3, "rel err {err}");
}

proptest! {
    #[test]
    fn loss_is_bounded_by_the_weight(seed in any::<u64>(), weight in 0.0f64..5.0, tau in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |r: usize| Tensor::from_vec((0..3 * r * r).map(|_| rng.gen_range(0.0..=1.0)).collect(), &[3, r, r]).unwrap();
        let a = vec![m(4), m(8), m(16)];
        let b = vec![m(4), m(8), m(16)];
        let out = alignment_from_maps(&a, &b, &AlignConfig { tau, weight, levels: vec![0, 1, 2] }).unwrap();
        prop_assert!(out.loss.item() >= 0.0 && out.loss.item() <= weight + 1e-12);
    }

    #[test]
    fn raising_tau_never_raises_the_loss(seed in any::<u64>(), t1 in 0.0f64..0.6, dt in 0.0f64..0.4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = || Tensor::from_vec((0..8 * 16).map(|_| rng.gen_range(0.0..=1.0)).collect(), &[8, 4, 4]).unwrap();
        let (a, b) = (m(), m());
        let lo = alignment_from_maps(std::slice::from_ref(&a), std::slice::from_ref(&b), &AlignConfig { tau: t1, weight: 1.0, levels: vec![0] }).unwrap();
        let hi = alignment_from_maps(&[a], &[b], &AlignConfig { tau: t1 + dt, weight: 1.0, levels: vec![0] }).unwrap();
        prop_assert!(hi.loss.item() <= lo.loss.item());
    }
}
