//! Trains one arm and prints spatial probes along the way.
//!
//! `cargo run -p eqgan-core --example probe -- <arm> <steps> <every> [key=value ...]`

use eqgan::config::TrainConfig;
use eqgan::experiment::{shift_probe, spatial_probe, Arm};
use eqgan::trainer::TrainState;

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
    let t = std::time::Instant::now();
    let (mut ld, mut lg, mut la) = (0.0, 0.0, 0.0);
    while state.step < steps {
        let (s, _) = state.train_step()?;
        ld += s.loss_d;
        lg += s.loss_g;
        la += s.l_align;
        if state.step % every == 0 {
            let k = every as f64;
            print!("step {} {:.0}s D {:.3} G {:.3} align {:.3}", state.step, t.elapsed().as_secs_f64(), ld / k, lg / k, la / k);
            (ld, lg, la) = (0.0, 0.0, 0.0);
            if state.config.uses_heatmaps() {
                let p = spatial_probe(&state, 128, 1)?;
                let sh = shift_probe(&state, 32, 0.5, 2)?;
                print!(" r_y {:.3} r_x {:.3} shift {}/32 ({:.2}px)", p.r_y, p.r_x, sh.moved_right, sh.mean_dx_px);
            }
            println!();
        }
    }
    Ok(())
}
