//! Rough per-step timing of the training computation at a given size.
//!
//! `cargo run --release -p eqgan-core --example step_time -- 16 16,16,8,8 8,16,16,16 16`

use std::time::Instant;

use autograd::grad;
use autograd::Tensor;
use eqgan::heatmap::{HeatmapMode, HeatmapSpec, SpatialBatch};
use eqgan::layers::Parameterized;
use eqgan::losses::{alignment_from_output, d_loss, g_loss, r1_penalty, AlignConfig};
use eqgan::nets::{Conditioning, Critic, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use eqgan::sel::SelDims;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn parse(s: &str) -> Vec<usize> {
    s.split(',').map(|v| v.parse().unwrap()).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let batch: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(16);
    let gch = args.get(2).map(|s| parse(s)).unwrap_or(vec![32, 32, 16, 8]);
    let dch = args.get(3).map(|s| parse(s)).unwrap_or(vec![8, 16, 32, 32]);
    let inter: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = Generator::new(
        GeneratorSpec {
            latent_dim: 64,
            base_res: 32,
            out_ch: 1,
            channels: gch,
            conditioning: Conditioning::Norm,
            sel_levels: vec![0, 1, 2],
            sel_dims: SelDims { inter_dim: inter, concat_hidden: 64 },
            counts: [1, 2, 4],
        },
        1,
    )
    .unwrap();
    let d = Discriminator::new(DiscriminatorSpec { in_ch: 1, base_res: 32, channels: dch }, 2).unwrap();
    println!("G params {}  D params {}", g.param_count(), d.param_count());
    let normal = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    };
    let spec = HeatmapSpec::default();
    for _ in 0..5 {
        let t0 = Instant::now();
        let sb = SpatialBatch::draw(HeatmapMode::Hierarchical, batch, 32, &spec, &mut rng).unwrap();
        let z = Tensor::from_vec(normal(batch * 64, &mut rng), &[batch, 64]).unwrap();
        let real = Tensor::from_vec(normal(batch * 1024, &mut rng), &[batch, 1, 32, 32]).unwrap();
        let t_hm = t0.elapsed();

        let fake = autograd::no_grad(|| g.forward(&z, Some(&sb))).unwrap();
        let loss = d_loss(&d.score(&real).unwrap(), &d.score(&fake).unwrap()) + r1_penalty(&d, &real, 1.0).unwrap();
        let dp: Vec<Tensor> = d.named_params().into_iter().map(|(_, t)| t).collect();
        let refs: Vec<&Tensor> = dp.iter().collect();
        let _ = grad(&loss, &refs, false);
        let t_d = t0.elapsed();

        let fd = d.frozen();
        let fake = g.forward(&z, Some(&sb)).unwrap();
        let out = fd.critique(&fake).unwrap();
        let al = alignment_from_output(&out, &sb.targets, &AlignConfig::default()).unwrap();
        let loss = g_loss(&out.scores) + al.loss;
        let gp: Vec<Tensor> = g.named_params().into_iter().map(|(_, t)| t).collect();
        let refs: Vec<&Tensor> = gp.iter().collect();
        let _ = grad(&loss, &refs, false);
        let t_g = t0.elapsed();
        println!(
            "heatmaps {:?}  D step {:?}  G step {:?}  total {:?}",
            t_hm,
            t_d - t_hm,
            t_g - t_d,
            t_g
        );
    }
}
