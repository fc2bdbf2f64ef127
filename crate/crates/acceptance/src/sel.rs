//! SEL suite: zero-init identity, instance-norm moments, agreement with a
//! scalar reference chain and finite-difference gradients.

use anyhow::{ensure, Result};
use autograd::check::{max_relative_error, numerical_grad};
use autograd::{grad, Tensor};
use eqgan::layers::{Conv2d, LRELU_SLOPE};
use eqgan::sel::{instance_norm, Sel, SelDims, SelVariant, INSTANCE_NORM_EPS, RESIDUAL_SCALE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn randomize(conv: &mut Conv2d, rng: &mut ChaCha8Rng) {
    conv.weight = Tensor::param(random(conv.weight.numel(), rng), conv.weight.shape()).expect("same shape");
    conv.bias = Tensor::param(random(conv.bias.numel(), rng), conv.bias.shape()).expect("same shape");
}

/// Plain-loop same-padding convolution of one sample `[c, r, r]`.
fn conv_ref(input: &[f64], in_ch: usize, r: usize, conv: &Conv2d) -> Vec<f64> {
    let (w, b) = (conv.weight.data(), conv.bias.data());
    let (out_ch, k) = (conv.weight.dim(0), conv.weight.dim(2));
    let p = (k / 2) as isize;
    let mut out = vec![0.0; out_ch * r * r];
    for o in 0..out_ch {
        for y in 0..r {
            for x in 0..r {
                let mut acc = b[o];
                for i in 0..in_ch {
                    for ky in 0..k {
                        for kx in 0..k {
                            let (sy, sx) = (y as isize + ky as isize - p, x as isize + kx as isize - p);
                            if sy < 0 || sx < 0 || sy >= r as isize || sx >= r as isize {
                                continue;
                            }
                            acc += w[((o * in_ch + i) * k + ky) * k + kx] * input[(i * r + sy as usize) * r + sx as usize];
                        }
                    }
                }
                out[(o * r + y) * r + x] = acc;
            }
        }
    }
    out
}

fn lrelu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x >= 0.0 { x } else { LRELU_SLOPE * x }).collect()
}

/// Norm variant, one sample: extract, predict sigma and mu, modulate the
/// instance-normalized features, post-convolve, add the scaled residual.
fn norm_ref(sel: &Sel, feat: &[f64], heat: &[f64]) -> Vec<f64> {
    let (c, r, n) = (sel.channels, sel.resolution, sel.hm_channels);
    let inter = sel.extract.out_channels();
    let h = lrelu(&conv_ref(heat, n, r, &sel.extract));
    let (sigma, mu) = sel.heads().expect("norm variant has heads");
    let s = conv_ref(&h, inter, r, sigma);
    let m = conv_ref(&h, inter, r, mu);
    let plane = r * r;
    let mut dx = vec![0.0; c * plane];
    for ch in 0..c {
        let v = &feat[ch * plane..(ch + 1) * plane];
        let mean = v.iter().sum::<f64>() / plane as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / plane as f64;
        for p in 0..plane {
            dx[ch * plane + p] = (v[p] - mean) / (var + INSTANCE_NORM_EPS).sqrt() * (1.0 + s[p]) + m[p];
        }
    }
    let post = conv_ref(&lrelu(&dx), c, r, &sel.post);
    feat.iter().zip(post).map(|(f, p)| f + RESIDUAL_SCALE * p).collect()
}

/// Concat variant, one sample.
fn concat_ref(sel: &Sel, feat: &[f64], heat: &[f64]) -> Vec<f64> {
    let (c, r, n) = (sel.channels, sel.resolution, sel.hm_channels);
    let inter = sel.extract.out_channels();
    let h = lrelu(&conv_ref(heat, n, r, &sel.extract));
    let mut joined = feat.to_vec();
    joined.extend_from_slice(&h);
    let (fuse, fuse_out) = sel.fusion().expect("concat variant has a fusion branch");
    let hidden = lrelu(&conv_ref(&joined, c + inter, r, fuse));
    let dx = conv_ref(&hidden, fuse.out_channels(), r, fuse_out);
    let post = conv_ref(&lrelu(&dx), c, r, &sel.post);
    feat.iter().zip(post).map(|(f, p)| f + RESIDUAL_SCALE * p).collect()
}

fn layer(variant: SelVariant, seed: u64) -> (Sel, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sel = Sel::new(variant, 4, 2, 2, SelDims { inter_dim: 3, concat_hidden: 5 }, &mut rng);
    randomize(&mut sel.post, &mut rng);
    (sel, rng)
}

const VARIANTS: [SelVariant; 2] = [SelVariant::Norm, SelVariant::Concat];

pub fn check() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1);

    // a fresh layer (zero-initialized post conv) is the identity
    let mut identity_gap = 0.0f64;
    for variant in VARIANTS {
        for res in [4usize, 8, 16] {
            let sel = Sel::new(variant, res, 3, 2, SelDims::default(), &mut rng);
            let feat = Tensor::from_vec(random(2 * 3 * res * res, &mut rng), &[2, 3, res, res])?;
            let heat = Tensor::from_vec(random(2 * 2 * 16, &mut rng), &[2, 2, 4, 4])?;
            let out = sel.forward(&feat, &heat)?;
            for (a, b) in out.data().iter().zip(feat.data()) {
                identity_gap = identity_gap.max((a - b).abs());
            }
        }
    }
    ensure!(identity_gap <= 1e-6, "zero-init layer moves features by {identity_gap:e}");

    // instance norm: per-channel mean 0, std 1
    let data: Vec<f64> = (0..3 * 4 * 64).map(|i| 5.0 * rng.gen_range(-1.0..1.0) + (i / 64) as f64).collect();
    let y = instance_norm(&Tensor::from_vec(data, &[3, 4, 8, 8])?, INSTANCE_NORM_EPS);
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    for plane in y.data().chunks(64) {
        let mean = plane.iter().sum::<f64>() / 64.0;
        let std = (plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }
    ensure!(worst_mean < 1e-5 && worst_std < 1e-4, "instance norm mean {worst_mean:e} std err {worst_std:e}");

    // forward against the scalar chain
    let mut chain_gap = 0.0f64;
    for (variant, reference) in [
        (SelVariant::Norm, norm_ref as fn(&Sel, &[f64], &[f64]) -> Vec<f64>),
        (SelVariant::Concat, concat_ref),
    ] {
        let (sel, mut rng) = layer(variant, 2);
        let feat = random(2 * 32, &mut rng);
        let heat = random(2 * 32, &mut rng);
        let out = sel.forward(&Tensor::from_vec(feat.clone(), &[2, 2, 4, 4])?, &Tensor::from_vec(heat.clone(), &[2, 2, 4, 4])?)?;
        for i in 0..2 {
            let want = reference(&sel, &feat[i * 32..(i + 1) * 32], &heat[i * 32..(i + 1) * 32]);
            for (a, b) in out.data()[i * 32..(i + 1) * 32].iter().zip(&want) {
                chain_gap = chain_gap.max((a - b).abs());
            }
        }
    }
    ensure!(chain_gap < 1e-6, "forward differs from the scalar chain by {chain_gap:e}");

    // gradients against central differences, for the input features and
    // the heatmap extractor weights
    let mut worst_grad = 0.0f64;
    for variant in VARIANTS {
        let (sel, mut rng) = layer(variant, 4);
        let feat = random(64, &mut rng);
        let heat = random(64, &mut rng);
        let probe = Tensor::from_vec(random(64, &mut rng), &[2, 2, 4, 4])?;
        let objective = |f: &[f64], s: &Sel| -> f64 {
            let x = Tensor::from_vec(f.to_vec(), &[2, 2, 4, 4]).expect("sized");
            let h = Tensor::from_vec(heat.clone(), &[2, 2, 4, 4]).expect("sized");
            (s.forward(&x, &h).expect("forward") * &probe).sum().item()
        };
        let x = Tensor::param(feat.clone(), &[2, 2, 4, 4])?;
        let loss = (sel.forward(&x, &Tensor::from_vec(heat.clone(), &[2, 2, 4, 4])?)? * &probe).sum();
        let g = grad(&loss, &[&x, &sel.extract.weight], false);
        let numeric = numerical_grad(|f| objective(f, &sel), &feat, 1e-5);
        let err_x = max_relative_error(g[0].data(), &numeric, 1e-6);
        let w0 = sel.extract.weight.to_vec();
        let numeric = numerical_grad(
            |w| {
                let mut s = sel.clone();
                s.extract.weight = Tensor::param(w.to_vec(), sel.extract.weight.shape()).expect("same shape");
                objective(&feat, &s)
            },
            &w0,
            1e-5,
        );
        let err_w = max_relative_error(g[1].data(), &numeric, 1e-6);
        ensure!(err_x < 1e-3 && err_w < 1e-3, "{variant:?}: gradient rel err {err_x:e} (features), {err_w:e} (weights)");
        worst_grad = worst_grad.max(err_x).max(err_w);
    }
    Ok(format!(
        "identity gap {identity_gap:.1e}; IN mean {worst_mean:.1e} std err {worst_std:.1e}; scalar chain gap {chain_gap:.1e}; grad rel err {worst_grad:.1e}"
    ))
}
