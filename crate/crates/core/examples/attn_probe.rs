//! Where does the discriminator's GradCAM point on real blobs during
//! training? Prints the correlation of the attention centroid with the
//! blob center per tap.
//!
//! `cargo run -p eqgan-core --example attn_probe -- <arm> <steps> <every> [key=value ...]`

use eqgan::attention::{gradcam, GradCamOptions};
use eqgan::config::TrainConfig;
use eqgan::data::center_of_mass;
use eqgan::experiment::{pearson, Arm};
use eqgan::trainer::TrainState;
use rand::SeedableRng;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arm = match args[0].as_str() {
        "baseline" => Arm::Baseline,
        "noise" => Arm::GaussianNoise,
        _ => Arm::SelAlign,
    };
    let steps: u64 = args[1].parse()?;
    let every: u64 = args[2].parse()?;
    let base = TrainConfig::from_toml_str("", &args[3..])?;
    let mut state = TrainState::new(arm.config(&base, base.seed))?;
    loop {
        if state.step % every == 0 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
            let real = state.data.batch(128, &mut rng)?;
            let real_c: Vec<(f64, f64)> = (0..128).map(|i| center_of_mass(&real.data()[i * 1024..(i + 1) * 1024], 32).unwrap()).collect();
            let maps = gradcam(&state.d, &real, &["d16", "d8", "d4"], GradCamOptions::default())?;
            print!("step {}", state.step);
            for (m, res) in maps.iter().zip([16usize, 8, 4]) {
                let plane = res * res;
                let (mut a, mut b, mut zero) = (vec![], vec![], 0);
                for i in 0..128 {
                    // attention centroid in base pixels; map values are >= 0
                    let v = &m.data()[i * plane..(i + 1) * plane];
                    let s: f64 = v.iter().sum();
                    if s <= 0.0 {
                        zero += 1;
                        continue;
                    }
                    let cx = v.iter().enumerate().map(|(k, w)| w * (k % res) as f64).sum::<f64>() / s;
                    a.push(real_c[i].1);
                    b.push((cx + 0.5) * 32.0 / res as f64 - 0.5);
                }
                print!(" | d{res}: r_x {:.3} zero {}", pearson(&a, &b), zero);
            }
            println!();
        }
        if state.step >= steps {
            break;
        }
        state.train_step()?;
    }
    Ok(())
}
