//! The adversarial training loop.
//!
//! Each step updates D once (logistic loss on real and generated images plus
//! R1 on reals) and then G once (non-saturating loss plus the weighted
//! alignment loss, both computed through a parameter-frozen copy of D).
//! Heatmaps are drawn fresh for every batch.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use autograd::optim::{Adam, AdamConfig};
use autograd::{grad, no_grad, Tensor};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, NamedTensor};
use crate::config::{DatasetKind, TrainConfig};
use crate::data::{load_image_folder, BlobDataset, DataSource};
use crate::error::{Error, Result};
use crate::heatmap::SpatialBatch;
use crate::imageio::grid_raster;
use crate::layers::{assign_params, Parameterized};
use crate::losses::{alignment_from_output, d_loss, g_loss, r1_from_scores};
use crate::metrics::{disequilibrium_indicator, fid_between_sets, DIReport, FeatureExtractor, FidReport, Logbook, MetricsRecord};
use crate::nets::{Critic, Discriminator, Generator};

/// Images generated or scored per chunk during evaluation.
const EVAL_CHUNK: usize = 100;

/// Everything a run needs to continue: parameters, optimizer moments, the
/// training RNG and the step counter.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub config_hash: String,
    pub step: u64,
    pub g: Generator,
    pub d: Discriminator,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub rng: ChaCha8Rng,
    pub data: DataSource,
}

/// Per-step values written to the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    /// Truncated alignment distance before weighting (0 without heatmaps).
    pub l_align: f64,
    pub r1: f64,
    pub min_real: f64,
    pub max_fake: f64,
    /// Samples whose alignment distance reached `tau`.
    pub align_kept: usize,
}

/// Wall-clock split of one step. Kept out of the metrics log so that log
/// stays byte-reproducible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: u64,
    pub seconds: f64,
    pub heatmap_seconds: f64,
}

pub fn build_data(config: &TrainConfig) -> Result<DataSource> {
    Ok(match config.dataset {
        DatasetKind::Blobs => DataSource::Blobs(BlobDataset::new(config.blob_spec())?),
        DatasetKind::Folder => {
            let f = load_image_folder(Path::new(&config.data_dir), config.base_res, config.flips)?;
            if f.images.is_empty() {
                return Err(Error::Config(format!("no readable images in {}", config.data_dir)));
            }
            DataSource::Folder(f)
        }
    })
}

fn adam_for(model: &dyn Parameterized, config: &TrainConfig) -> Adam {
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.numel()).collect();
    Adam::new(
        AdamConfig { lr: config.lr, beta1: config.beta1, beta2: config.beta2, eps: config.adam_eps },
        &sizes,
    )
}

/// `[n, dim]` standard-normal latent codes.
pub fn sample_latents(n: usize, dim: usize, rng: &mut impl RngCore) -> Tensor {
    let data = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(data, &[n, dim]).expect("sizes computed above")
}

/// Spatial inputs for `n` samples under the config's heatmap mode, or
/// `None` for generators that take no heatmaps.
pub fn sample_spatial(config: &TrainConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Option<SpatialBatch>> {
    if !config.uses_heatmaps() {
        return Ok(None);
    }
    SpatialBatch::draw(config.heatmap_mode, n, config.base_res, &config.heatmap_spec(), rng).map(Some)
}

fn params_of(model: &dyn Parameterized) -> Vec<Tensor> {
    model.named_params().into_iter().map(|(_, t)| t).collect()
}

fn apply_adam(model: &mut dyn Parameterized, opt: &mut Adam, grads: &[Tensor]) {
    let mut params = params_of(model);
    let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
    opt.step(&mut refs, grads);
    let mut it = params.into_iter();
    model.visit_mut(&mut |_, t| *t = it.next().expect("same parameter order"));
}

fn summary(t: &Tensor) -> String {
    let d = t.data();
    let n = d.len().max(1) as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let (lo, hi) = d.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    format!("mean {mean:.4e} std {:.4e} min {lo:.4e} max {hi:.4e}", var.sqrt())
}

fn ensure_finite(step: u64, what: &str, values: &[&Tensor], context: &[(&str, &Tensor)]) -> Result<()> {
    if values.iter().all(|t| t.all_finite()) {
        return Ok(());
    }
    let diagnostics = context
        .iter()
        .map(|(name, t)| format!("{name}: {}", summary(t)))
        .collect::<Vec<_>>()
        .join("; ");
    Err(Error::NonFinite { step, what: what.to_string(), diagnostics })
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<TrainState> {
        let data = build_data(&config)?;
        TrainState::with_data(config, data)
    }

    /// Initial state for `config`, drawing real images from `data`.
    pub fn with_data(config: TrainConfig, data: DataSource) -> Result<TrainState> {
        config.validate()?;
        if data.channels() != config.image_channels() || data.res() != config.base_res {
            return Err(Error::Config(format!(
                "data is {}-channel {}px, config expects {}-channel {}px",
                data.channels(),
                data.res(),
                config.image_channels(),
                config.base_res
            )));
        }
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let g = Generator::new(config.generator_spec(), master.next_u64())?;
        let d = Discriminator::new(config.discriminator_spec(), master.next_u64())?;
        let rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        Ok(TrainState {
            g_opt: adam_for(&g, &config),
            d_opt: adam_for(&d, &config),
            config_hash: config.hash(),
            config,
            step: 0,
            g,
            d,
            rng,
            data,
        })
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self) -> Result<(StepStats, StepTiming)> {
        let started = Instant::now();
        let mut heatmap_seconds = 0.0;
        let cfg = self.config.clone();
        let n = cfg.batch_size;
        let step = self.step;

        // discriminator
        let real = self.data.batch(n, &mut self.rng)?;
        let t = Instant::now();
        let spatial = sample_spatial(&cfg, n, &mut self.rng)?;
        heatmap_seconds += t.elapsed().as_secs_f64();
        let z = sample_latents(n, cfg.latent_dim, &mut self.rng);
        let fake = no_grad(|| self.g.forward(&z, spatial.as_ref()))?;
        let x_real = real.detach_param();
        let s_real = self.d.score(&x_real)?;
        let s_fake = self.d.score(&fake)?;
        let mut loss_d = d_loss(&s_real, &s_fake);
        let mut r1 = 0.0;
        if cfg.r1_gamma > 0.0 {
            let penalty = r1_from_scores(&s_real, &x_real, cfg.r1_gamma)?;
            r1 = penalty.item();
            loss_d = loss_d + penalty;
        }
        let context = [("real", &real), ("fake", &fake), ("score_real", &s_real), ("score_fake", &s_fake)];
        ensure_finite(step, "discriminator loss", &[&loss_d], &context)?;
        let d_params = params_of(&self.d);
        let d_grads = grad(&loss_d, &d_params.iter().collect::<Vec<_>>(), false);
        ensure_finite(step, "discriminator gradient", &d_grads.iter().collect::<Vec<_>>(), &context)?;
        apply_adam(&mut self.d, &mut self.d_opt, &d_grads);
        let min_real = s_real.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let max_fake = s_fake.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        // generator, through a copy of D that cannot receive gradient
        let d_hash = self.d.params_hash();
        let t = Instant::now();
        let spatial = sample_spatial(&cfg, n, &mut self.rng)?;
        heatmap_seconds += t.elapsed().as_secs_f64();
        let z = sample_latents(n, cfg.latent_dim, &mut self.rng);
        let fake = self.g.forward(&z, spatial.as_ref())?;
        let frozen = self.d.frozen();
        let out = frozen.critique(&fake)?;
        let mut loss_g = g_loss(&out.scores);
        let adv_g = loss_g.item();
        let (mut l_align, mut align_kept) = (0.0, 0);
        if let Some(sp) = spatial.as_ref().filter(|_| cfg.uses_alignment()) {
            let al = alignment_from_output(&out, &sp.targets, &cfg.align())?;
            l_align = al.value;
            align_kept = al.kept;
            if cfg.align_weight > 0.0 && step >= cfg.align_warmup {
                loss_g = loss_g + al.loss;
            }
        }
        let context = [("fake", &fake), ("score_fake", &out.scores)];
        ensure_finite(step, "generator loss", &[&loss_g], &context)?;
        let g_params = params_of(&self.g);
        let g_grads = grad(&loss_g, &g_params.iter().collect::<Vec<_>>(), false);
        ensure_finite(step, "generator gradient", &g_grads.iter().collect::<Vec<_>>(), &context)?;
        apply_adam(&mut self.g, &mut self.g_opt, &g_grads);
        if self.d.params_hash() != d_hash {
            return Err(Error::InvalidArgument(format!("discriminator parameters changed during the generator step at step {step}")));
        }

        self.step += 1;
        let stats = StepStats {
            step: self.step,
            loss_d: loss_d.item(),
            loss_g: adv_g,
            l_align,
            r1,
            min_real,
            max_fake,
            align_kept,
        };
        let timing = StepTiming { step: self.step, seconds: started.elapsed().as_secs_f64(), heatmap_seconds };
        Ok((stats, timing))
    }

    /// Generator output for explicit latents and spatial inputs, without
    /// recording a graph.
    pub fn generate(&self, z: &Tensor, spatial: Option<&SpatialBatch>) -> Result<Tensor> {
        no_grad(|| self.g.forward(z, spatial))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        for (prefix, model, opt) in [("g.", &self.g as &dyn Parameterized, &self.g_opt), ("d.", &self.d, &self.d_opt)] {
            for (i, (name, t)) in model.named_params().into_iter().enumerate() {
                let shape = t.shape().to_vec();
                tensors.push(NamedTensor { name: format!("{prefix}{name}"), shape: shape.clone(), data: t.to_vec() });
                tensors.push(NamedTensor { name: format!("{prefix}adam_m.{name}"), shape: shape.clone(), data: opt.m[i].clone() });
                tensors.push(NamedTensor { name: format!("{prefix}adam_v.{name}"), shape, data: opt.v[i].clone() });
            }
        }
        let meta = serde_json::json!({
            "kind": "train",
            "step": self.step,
            "config": self.config,
            "config_hash": self.config_hash,
            "g_adam_step": self.g_opt.step,
            "d_adam_step": self.d_opt.step,
            "rng": {
                "seed": hex::encode(self.rng.get_seed()),
                "stream": self.rng.get_stream(),
                "word_pos": self.rng.get_word_pos().to_string(),
            },
        });
        checkpoint::write(path, &meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<TrainState> {
        let (meta, tensors) = checkpoint::read(path)?;
        TrainState::from_parts(path, &meta, tensors, None)
    }

    /// Like [`TrainState::load`] but reusing an already built data source.
    pub fn load_with_data(path: &Path, data: DataSource) -> Result<TrainState> {
        let (meta, tensors) = checkpoint::read(path)?;
        TrainState::from_parts(path, &meta, tensors, Some(data))
    }

    fn from_parts(path: &Path, meta: &serde_json::Value, tensors: Vec<NamedTensor>, data: Option<DataSource>) -> Result<TrainState> {
        let bad = |reason: String| Error::Checkpoint { path: PathBuf::from(path), reason };
        let config = config_from_meta(path, meta)?;
        let mut state = match data {
            Some(d) => TrainState::with_data(config, d)?,
            None => TrainState::new(config)?,
        };
        let by_name: HashMap<String, (Vec<usize>, Vec<f64>)> =
            tensors.into_iter().map(|t| (t.name, (t.shape, t.data))).collect();
        assign_params(&mut state.g, "g.", &by_name).map_err(bad)?;
        assign_params(&mut state.d, "d.", &by_name).map_err(bad)?;
        for (prefix, model, opt) in [("g.", &state.g as &dyn Parameterized, &mut state.g_opt), ("d.", &state.d, &mut state.d_opt)] {
            for (i, (name, _)) in model.named_params().into_iter().enumerate() {
                for (kind, slot) in [("adam_m", &mut opt.m[i]), ("adam_v", &mut opt.v[i])] {
                    let key = format!("{prefix}{kind}.{name}");
                    let (_, data) = by_name.get(&key).ok_or_else(|| bad(format!("missing tensor {key}")))?;
                    if data.len() != slot.len() {
                        return Err(bad(format!("{key} has {} values, expected {}", data.len(), slot.len())));
                    }
                    slot.copy_from_slice(data);
                }
            }
        }
        state.g_opt.step = meta["g_adam_step"].as_u64().ok_or_else(|| bad("missing g_adam_step".into()))?;
        state.d_opt.step = meta["d_adam_step"].as_u64().ok_or_else(|| bad("missing d_adam_step".into()))?;
        state.step = meta["step"].as_u64().ok_or_else(|| bad("missing step".into()))?;
        let rng = &meta["rng"];
        let seed_bytes = hex::decode(rng["seed"].as_str().unwrap_or_default()).map_err(|e| bad(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = seed_bytes.try_into().map_err(|_| bad("rng seed must be 32 bytes".into()))?;
        let word_pos: u128 = rng["word_pos"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad rng word_pos".into()))?;
        let mut r = ChaCha8Rng::from_seed(seed);
        r.set_stream(rng["stream"].as_u64().ok_or_else(|| bad("missing rng stream".into()))?);
        r.set_word_pos(word_pos);
        state.rng = r;
        Ok(state)
    }
}

fn config_from_meta(path: &Path, meta: &serde_json::Value) -> Result<TrainConfig> {
    let bad = |reason: String| Error::Checkpoint { path: PathBuf::from(path), reason };
    if meta.get("kind").and_then(|k| k.as_str()) != Some("train") {
        return Err(bad("not a training checkpoint".into()));
    }
    let config: TrainConfig = serde_json::from_value(meta["config"].clone()).map_err(|e| bad(format!("config: {e}")))?;
    let stored_hash = meta["config_hash"].as_str().unwrap_or_default();
    if stored_hash != config.hash() {
        return Err(bad(format!("config hash {stored_hash} does not match its config ({})", config.hash())));
    }
    Ok(config)
}

/// The networks of a training checkpoint, without optimizer state or data.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub config: TrainConfig,
    pub step: u64,
    pub g: Generator,
    pub d: Discriminator,
    /// SHA-256 of the checkpoint file.
    pub file_hash: String,
}

impl Snapshot {
    pub fn load(path: &Path) -> Result<Snapshot> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })?;
        let (meta, tensors) = checkpoint::decode(&bytes, path)?;
        let config = config_from_meta(path, &meta)?;
        config.validate()?;
        let bad = |reason: String| Error::Checkpoint { path: PathBuf::from(path), reason };
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let mut g = Generator::new(config.generator_spec(), master.next_u64())?;
        let mut d = Discriminator::new(config.discriminator_spec(), master.next_u64())?;
        let by_name: HashMap<String, (Vec<usize>, Vec<f64>)> =
            tensors.into_iter().map(|t| (t.name, (t.shape, t.data))).collect();
        assign_params(&mut g, "g.", &by_name).map_err(bad)?;
        assign_params(&mut d, "d.", &by_name).map_err(bad)?;
        Ok(Snapshot {
            step: meta["step"].as_u64().ok_or_else(|| bad("missing step".into()))?,
            config,
            g,
            d,
            file_hash: hex::encode(Sha256::digest(&bytes)),
        })
    }

    /// Generator output without recording a graph.
    pub fn generate(&self, z: &Tensor, spatial: Option<&SpatialBatch>) -> Result<Tensor> {
        no_grad(|| self.g.forward(z, spatial))
    }
}

/// Result of one evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: u64,
    pub config_hash: String,
    pub di: DIReport,
    pub fid: FidReport,
    pub pool: usize,
}

/// RNG for evaluation at `step`: independent of the training stream, so
/// evaluating never changes the training trajectory.
pub fn eval_rng(config: &TrainConfig, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1 + step);
    rng
}

/// Generates `n` images in chunks, returning them with their spatial inputs.
pub fn generate_pool(state: &TrainState, n: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor, Vec<Option<SpatialBatch>>)> {
    let cfg = &state.config;
    let mut data = Vec::new();
    let mut spatials = Vec::new();
    let mut left = n;
    while left > 0 {
        let k = left.min(EVAL_CHUNK);
        let spatial = sample_spatial(cfg, k, rng)?;
        let z = sample_latents(k, cfg.latent_dim, rng);
        data.extend_from_slice(state.generate(&z, spatial.as_ref())?.data());
        spatials.push(spatial);
        left -= k;
    }
    let (c, r) = (cfg.image_channels(), cfg.base_res);
    Ok((Tensor::from_vec(data, &[n, c, r, r]).expect("sizes computed above"), spatials))
}

/// Critic scores of `images` in chunks, without a graph.
pub fn score_images(critic: &dyn Critic, images: &Tensor) -> Result<Vec<f64>> {
    let n = images.dim(0);
    let per = images.numel() / n.max(1);
    let mut shape = images.shape().to_vec();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let k = (n - start).min(EVAL_CHUNK);
        shape[0] = k;
        let chunk = Tensor::from_vec(images.data()[start * per..(start + k) * per].to_vec(), &shape).expect("chunk size");
        out.extend_from_slice(no_grad(|| critic.score(&chunk))?.data());
        start += k;
    }
    Ok(out)
}

/// Repeats single-channel images to three channels for the feature
/// extractor.
pub fn to_rgb(images: &Tensor) -> Tensor {
    if images.dim(1) == 3 {
        return images.clone();
    }
    no_grad(|| Tensor::concat(&[images, images, images], 1))
}

/// DI and FID on a fresh pool of real and generated images. Reads the state
/// only.
pub fn evaluate(state: &TrainState, extractor: &FeatureExtractor) -> Result<EvalReport> {
    let cfg = &state.config;
    let mut rng = eval_rng(cfg, state.step);
    let pool = cfg.eval_pool;
    let real = state.data.batch(pool, &mut rng)?;
    let (fake, _) = generate_pool(state, pool, &mut rng)?;
    let s_real = score_images(&state.d, &real)?;
    let s_fake = score_images(&state.d, &fake)?;
    let di = disequilibrium_indicator(&s_real, &s_fake, cfg.di_repeats, cfg.di_per_side, cfg.seed ^ state.step)?;
    let fid = fid_between_sets(&to_rgb(&real), &to_rgb(&fake), extractor)?;
    Ok(EvalReport { step: state.step, config_hash: state.config_hash.clone(), di, fid, pool })
}

/// Sample grid: row `i` shares one spatial input, column `j` one latent.
pub fn sample_grid(state: &TrainState, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let cfg = &state.config;
    let spatial = sample_spatial(cfg, rows, rng)?;
    let z = sample_latents(cols, cfg.latent_dim, rng);
    let (z, spatial) = grid_batch(&z, spatial.as_ref(), rows, cols);
    state.generate(&z, spatial.as_ref())
}

/// Expands `cols` latents and `rows` spatial inputs into the row-major
/// `rows * cols` batch of a sample grid.
pub fn grid_batch(z: &Tensor, spatial: Option<&SpatialBatch>, rows: usize, cols: usize) -> (Tensor, Option<SpatialBatch>) {
    let row_idx: Vec<usize> = (0..rows * cols).map(|i| i / cols).collect();
    let per = z.dim(1);
    let mut zdata = Vec::with_capacity(rows * cols * per);
    for i in 0..rows * cols {
        let j = i % cols;
        zdata.extend_from_slice(&z.data()[j * per..(j + 1) * per]);
    }
    let z = Tensor::from_vec(zdata, &[rows * cols, per]).expect("sizes computed above");
    (z, spatial.map(|s| s.select(&row_idx)))
}

/// Paths and results of a finished run.
#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub timing: PathBuf,
    pub evals: Vec<EvalReport>,
    pub final_checkpoint: PathBuf,
    pub files: Vec<PathBuf>,
    pub state: TrainState,
}

/// Trains `state` up to `config.steps`, writing into `dir`:
///
/// - `config.toml`, `metrics.jsonl` (deterministic), `timing.jsonl`,
///   `evals.jsonl` with full DI reports,
/// - `grid_<step>.png` sample grids and `ckpt_<step>.bin` checkpoints,
/// - `final.bin`.
///
/// Evaluations run at step 0 (fresh runs), every `eval_every` steps and at
/// the end.
pub fn run_training(mut state: TrainState, dir: &Path, extractor: &FeatureExtractor) -> Result<RunOutput> {
    std::fs::create_dir_all(dir)?;
    let cfg = state.config.clone();
    let hash = state.config_hash.clone();
    let fresh = state.step == 0;
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, format!("# config_hash = \"{hash}\"\n{}", cfg.to_toml()))?;
    let metrics_path = dir.join("metrics.jsonl");
    let timing_path = dir.join("timing.jsonl");
    let evals_path = dir.join("evals.jsonl");
    let open = |p: &Path| if fresh { Logbook::create(p) } else { Logbook::append_to(p) };
    let mut metrics = open(&metrics_path)?;
    let mut timing = open(&timing_path)?;
    let mut evals_log = open(&evals_path)?;
    let mut files = vec![config_path, metrics_path.clone(), timing_path.clone(), evals_path.clone()];
    let mut evals = Vec::new();

    let mut run_eval = |state: &TrainState, files: &mut Vec<PathBuf>, evals: &mut Vec<EvalReport>| -> Result<EvalReport> {
        let report = evaluate(state, extractor)?;
        evals_log.write(&report)?;
        let mut rng = eval_rng(&state.config, state.step);
        rng.set_word_pos(1 << 40);
        let grid = sample_grid(state, cfg.grid_rows, cfg.grid_cols, &mut rng)?;
        let path = dir.join(format!("grid_{:06}.png", state.step));
        grid_raster(&grid, cfg.grid_rows, cfg.grid_cols, 1)?
            .save_png(&path, &[("config_hash", &hash), ("step", &state.step.to_string())])?;
        files.push(path);
        evals.push(report.clone());
        Ok(report)
    };

    if fresh {
        // step 0 has no losses yet, so its evaluation goes to evals.jsonl only
        run_eval(&state, &mut files, &mut evals)?;
    }
    while state.step < cfg.steps {
        let (stats, t) = state.train_step()?;
        timing.write(&t)?;
        let step = state.step;
        let eval_due = (cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every)) || step == cfg.steps;
        let report = if eval_due { Some(run_eval(&state, &mut files, &mut evals)?) } else { None };
        if eval_due || (cfg.log_every > 0 && step.is_multiple_of(cfg.log_every)) {
            metrics.write(&MetricsRecord {
                step,
                loss_d: stats.loss_d,
                loss_g: stats.loss_g,
                l_align: stats.l_align,
                min_real: stats.min_real,
                max_fake: stats.max_fake,
                di_mean: report.as_ref().map(|r| r.di.di_mean),
                fid: report.as_ref().map(|r| r.fid.fid),
                config_hash: hash.clone(),
            })?;
        }
        if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) && step < cfg.steps {
            let path = dir.join(format!("ckpt_{step:06}.bin"));
            state.save(&path)?;
            files.push(path);
        }
        if let Some(r) = report {
            log::info!("step {step}: DI {:.4} FID {:.4}", r.di.di_mean, r.fid.fid);
        }
    }
    let final_checkpoint = dir.join("final.bin");
    state.save(&final_checkpoint)?;
    files.push(final_checkpoint.clone());
    Ok(RunOutput { dir: dir.to_path_buf(), metrics: metrics_path, timing: timing_path, evals, final_checkpoint, files, state })
}
