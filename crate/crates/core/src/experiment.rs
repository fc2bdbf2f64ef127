//! The three-arm blob experiment and the probes it relies on.
//!
//! Arms: a plain generator (no heatmaps), SEL with alignment on
//! hierarchical heatmaps, and SEL with alignment on unstructured Gaussian
//! noise maps. Each trained model is probed for spatial awareness (does
//! the generated blob follow the requested level-0 center?) and for its
//! mean DI over the run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::center_of_mass;
use crate::error::{Error, Result};
use crate::heatmap::{norm_to_pixel, HeatmapMode, HeatmapPyramid, SpatialBatch};
use crate::metrics::FeatureExtractor;
use crate::nets::Conditioning;
use crate::trainer::{run_training, sample_latents, EvalReport, TrainState};

/// Images generated by the correlation probe.
pub const PROBE_SAMPLES: usize = 256;
/// Latents in the shift sign test.
pub const SHIFT_LATENTS: usize = 32;
/// Rightward level-0 shift in normalized units.
pub const SHIFT_DX: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    SelAlign,
    GaussianNoise,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Baseline, Arm::SelAlign, Arm::GaussianNoise];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::SelAlign => "sel_align",
            Arm::GaussianNoise => "gaussian_noise",
        }
    }

    /// `base` with the arm's conditioning, heatmap mode and `seed`.
    pub fn config(self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.seed = seed;
        match self {
            Arm::Baseline => cfg.sel_variant = Conditioning::None,
            Arm::SelAlign => cfg.heatmap_mode = HeatmapMode::Hierarchical,
            Arm::GaussianNoise => cfg.heatmap_mode = HeatmapMode::GaussianNoise,
        }
        if self != Arm::Baseline && cfg.sel_variant == Conditioning::None {
            cfg.sel_variant = Conditioning::Norm;
        }
        cfg
    }
}

/// Sample Pearson correlation. `NaN` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Correlation between requested level-0 centers and generated blob
/// centroids, per axis, in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialProbe {
    pub samples: usize,
    pub r_y: f64,
    pub r_x: f64,
}

impl SpatialProbe {
    /// The weaker axis: what "follows the center" has to clear.
    pub fn min_r(&self) -> f64 {
        self.r_y.min(self.r_x)
    }

    /// The stronger axis by magnitude: what "no correlation" has to stay
    /// under.
    pub fn max_abs_r(&self) -> f64 {
        self.r_y.abs().max(self.r_x.abs())
    }
}

fn centroids(images: &autograd::Tensor) -> Result<Vec<(f64, f64)>> {
    let (n, c, r) = (images.dim(0), images.dim(1), images.dim(2));
    let per = c * r * r;
    (0..n)
        .map(|i| {
            // channel mean, so the probe also works on RGB models
            let img = &images.data()[i * per..(i + 1) * per];
            let gray: Vec<f64> = (0..r * r).map(|p| (0..c).map(|ch| img[ch * r * r + p]).sum::<f64>() / c as f64).collect();
            center_of_mass(&gray, r).ok_or_else(|| Error::InvalidArgument(format!("generated image {i} is flat")))
        })
        .collect()
}

/// Feeds `samples` hierarchical pyramids (fresh latents each) to the
/// generator and correlates the level-0 centers with the blob centroids.
/// Models trained on noise maps get the same structured maps, so their
/// probe measures whether structured input moves the output at all.
pub fn spatial_probe(state: &TrainState, samples: usize, seed: u64) -> Result<SpatialProbe> {
    let cfg = &state.config;
    if !cfg.uses_heatmaps() {
        return Err(Error::InvalidArgument("the generator takes no heatmaps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spatial = SpatialBatch::draw(HeatmapMode::Hierarchical, samples, cfg.base_res, &cfg.heatmap_spec(), &mut rng)?;
    let z = sample_latents(samples, cfg.latent_dim, &mut rng);
    let images = state.generate(&z, Some(&spatial))?;
    let found = centroids(&images)?;
    let res = cfg.base_res;
    let (mut ry, mut rx, mut gy, mut gx) = (vec![], vec![], vec![], vec![]);
    for (c, g) in spatial.centers.iter().zip(found) {
        let c = c.expect("pyramids carry centers");
        ry.push(norm_to_pixel(c.y, res));
        rx.push(norm_to_pixel(c.x, res));
        gy.push(g.0);
        gx.push(g.1);
    }
    Ok(SpatialProbe { samples, r_y: pearson(&ry, &gy), r_x: pearson(&rx, &gx) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftProbe {
    pub latents: usize,
    /// Latents whose centroid moved right after the shift.
    pub moved_right: usize,
    pub mean_dx_px: f64,
}

impl ShiftProbe {
    pub fn agreement(&self) -> f64 {
        self.moved_right as f64 / self.latents as f64
    }
}

/// For each latent: one hierarchical pyramid with level-0 `x <= 1 - dx`,
/// rendered as drawn and with every center moved right by `dx`. Counts how
/// often the blob centroid moves right.
pub fn shift_probe(state: &TrainState, latents: usize, dx: f64, seed: u64) -> Result<ShiftProbe> {
    let cfg = &state.config;
    if !cfg.uses_heatmaps() {
        return Err(Error::InvalidArgument("the generator takes no heatmaps".into()));
    }
    let spec = cfg.heatmap_spec();
    let mut base = Vec::with_capacity(latents);
    let mut moved = Vec::with_capacity(latents);
    let mut draw_seed = seed;
    while base.len() < latents {
        let p = HeatmapPyramid::sample_seeded(cfg.base_res, &spec, draw_seed)?;
        draw_seed = draw_seed.wrapping_add(1);
        if p.level0_center().x + dx <= 1.0 {
            moved.push(p.shifted(0.0, dx)?);
            base.push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_latents(latents, cfg.latent_dim, &mut rng);
    let before = centroids(&state.generate(&z, Some(&SpatialBatch::from_pyramids(&base)?))?)?;
    let after = centroids(&state.generate(&z, Some(&SpatialBatch::from_pyramids(&moved)?))?)?;
    let shifts: Vec<f64> = before.iter().zip(&after).map(|(b, a)| a.1 - b.1).collect();
    Ok(ShiftProbe {
        latents,
        moved_right: shifts.iter().filter(|&&d| d > 0.0).count(),
        mean_dx_px: shifts.iter().sum::<f64>() / latents as f64,
    })
}

/// Mean of `di_mean` over the evaluations after step 0.
pub fn mean_di(evals: &[EvalReport]) -> f64 {
    let v: Vec<f64> = evals.iter().filter(|e| e.step > 0).map(|e| e.di.di_mean).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Outcome of one trained arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub seed: u64,
    pub config_hash: String,
    pub mean_di: f64,
    pub final_fid: f64,
    pub spatial: Option<SpatialProbe>,
    pub shift: Option<ShiftProbe>,
    pub seconds: f64,
    pub run_dir: PathBuf,
}

/// Trains one arm under `seed` into `dir` and probes the final model.
pub fn run_arm(arm: Arm, base: &TrainConfig, seed: u64, dir: &Path, extractor: &FeatureExtractor) -> Result<ArmResult> {
    let started = Instant::now();
    let cfg = arm.config(base, seed);
    let out = run_training(TrainState::new(cfg)?, dir, extractor)?;
    let state = &out.state;
    // probe seeds are fixed per run seed so every arm sees the same inputs
    let (spatial, shift) = if state.config.uses_heatmaps() {
        (
            Some(spatial_probe(state, PROBE_SAMPLES, 0x9e37_0000 + seed)?),
            Some(shift_probe(state, SHIFT_LATENTS, SHIFT_DX, 0x7f4a_0000 + seed)?),
        )
    } else {
        (None, None)
    };
    let result = ArmResult {
        arm,
        seed,
        config_hash: state.config_hash.clone(),
        mean_di: mean_di(&out.evals),
        final_fid: out.evals.last().map(|e| e.fid.fid).unwrap_or(f64::NAN),
        spatial,
        shift,
        seconds: started.elapsed().as_secs_f64(),
        run_dir: dir.to_path_buf(),
    };
    std::fs::write(dir.join("result.json"), serde_json::to_vec_pretty(&result)?)?;
    Ok(result)
}

/// One pass/fail judgement over the whole experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub results: Vec<ArmResult>,
    pub verdicts: Vec<Verdict>,
}

fn find(results: &[ArmResult], arm: Arm, seed: u64) -> Option<&ArmResult> {
    results.iter().find(|r| r.arm == arm && r.seed == seed)
}

/// Applies the experiment's three judgements to finished runs:
///
/// - spatial awareness: the SEL+align arm's weaker-axis correlation is
///   above 0.5 in every seed,
/// - equilibrium: its mean DI is at most the baseline's in at least two
///   thirds of the seeds,
/// - noise ablation: the noise arm's stronger-axis `|r|` stays below 0.2
///   in every seed.
pub fn judge(results: &[ArmResult], seeds: &[u64]) -> Vec<Verdict> {
    let mut spatial_ok = true;
    let mut spatial_detail = Vec::new();
    let mut di_wins = 0;
    let mut di_detail = Vec::new();
    let mut noise_ok = true;
    let mut noise_detail = Vec::new();
    for &s in seeds {
        match find(results, Arm::SelAlign, s).and_then(|r| r.spatial.as_ref()) {
            Some(p) => {
                spatial_ok &= p.min_r() > 0.5;
                spatial_detail.push(format!("seed {s}: r_y {:.3} r_x {:.3}", p.r_y, p.r_x));
            }
            None => {
                spatial_ok = false;
                spatial_detail.push(format!("seed {s}: missing"));
            }
        }
        match (find(results, Arm::SelAlign, s), find(results, Arm::Baseline, s)) {
            (Some(a), Some(b)) => {
                di_wins += (a.mean_di <= b.mean_di) as usize;
                di_detail.push(format!("seed {s}: {:.4} vs {:.4}", a.mean_di, b.mean_di));
            }
            _ => di_detail.push(format!("seed {s}: missing")),
        }
        match find(results, Arm::GaussianNoise, s).and_then(|r| r.spatial.as_ref()) {
            Some(p) => {
                noise_ok &= p.max_abs_r() < 0.2;
                noise_detail.push(format!("seed {s}: r_y {:.3} r_x {:.3}", p.r_y, p.r_x));
            }
            None => {
                noise_ok = false;
                noise_detail.push(format!("seed {s}: missing"));
            }
        }
    }
    let need = (2 * seeds.len()).div_ceil(3);
    vec![
        Verdict {
            name: "spatial awareness (SEL+align r > 0.5 every seed)".into(),
            pass: spatial_ok && !seeds.is_empty(),
            detail: spatial_detail.join("; "),
        },
        Verdict {
            name: format!("equilibrium direction (SEL+align DI <= baseline DI in >= {need}/{} seeds)", seeds.len()),
            pass: di_wins >= need && !seeds.is_empty(),
            detail: format!("{di_wins} wins; {}", di_detail.join("; ")),
        },
        Verdict {
            name: "noise ablation (|r| < 0.2 every seed)".into(),
            pass: noise_ok && !seeds.is_empty(),
            detail: noise_detail.join("; "),
        },
    ]
}

/// Trains every arm for every seed under `dir/<arm>_seed<s>` and judges
/// the results.
pub fn run_experiment(base: &TrainConfig, seeds: &[u64], dir: &Path, extractor: &FeatureExtractor) -> Result<ExperimentReport> {
    std::fs::create_dir_all(dir)?;
    let mut results = Vec::new();
    for &seed in seeds {
        for arm in Arm::ALL {
            let run_dir = dir.join(format!("{}_seed{seed}", arm.name()));
            let r = run_arm(arm, base, seed, &run_dir, extractor)?;
            log::info!("{} seed {seed}: DI {:.4} spatial {:?} ({:.0}s)", arm.name(), r.mean_di, r.spatial, r.seconds);
            results.push(r);
        }
    }
    let verdicts = judge(&results, seeds);
    let report = ExperimentReport { results, verdicts };
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}
