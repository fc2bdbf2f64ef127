//! Command line front end.
//!
//! Every subcommand writes files and prints their paths on stdout, one per
//! line. Failures print a single JSON line `{"error": kind, "message": ...}`
//! on stderr. Random choices come from `--seed` (or the config seed), so a
//! repeated command reproduces its outputs.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use autograd::Tensor;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use eqgan::attention::{gradcam, normalize_max1, GradCamOptions};
use eqgan::config::TrainConfig;
use eqgan::data::load_image;
use eqgan::experiment::run_experiment;
use eqgan::heatmap::{level_sum, HeatmapMode, HeatmapPyramid, HeatmapSpec, PyramidRecord, SpatialBatch, LEVEL_RESOLUTIONS};
use eqgan::imageio::{grid_raster, image_raster, map_raster, overlay_raster};
use eqgan::metrics::{curves_svg, read_log, score_curves, FeatureExtractor, MetricsRecord};
use eqgan::trainer::{evaluate, grid_batch, run_training, sample_latents, sample_spatial, Snapshot, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Blend strength of attention overlays, as in the edit service.
const OVERLAY_ALPHA: f64 = 0.6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] eqgan::Error),
    #[error(transparent)]
    Service(#[from] edit_service::ServiceError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        use eqgan::Error as E;
        match self {
            CliError::Model(e) | CliError::Service(edit_service::ServiceError::Model(e)) => match e {
                E::InvalidArgument(_) | E::Shape(_) | E::UnknownTap(_) | E::MissingTapForLevel(_) => "invalid_argument",
                E::SamplingExhausted { .. } => "sampling_exhausted",
                E::PoolTooSmall { .. } => "pool_too_small",
                E::NonFinite { .. } => "non_finite",
                E::Config(_) => "config",
                E::Checkpoint { .. } | E::CheckpointVersion { .. } => "checkpoint",
                E::Image(_) => "image",
                E::Io(_) => "io",
                E::Json(_) => "json",
            },
            CliError::Service(edit_service::ServiceError::Io(_)) | CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
            CliError::Json(_) => "json",
        }
    }

    /// The one-line JSON error report.
    pub fn to_json_line(&self) -> String {
        let message = self.to_string().replace('\n', " ");
        serde_json::json!({ "error": self.kind(), "message": message }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "eqgan", version, about = "Spatially aware GAN training toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, writing logs, sample grids and checkpoints.
    Train(TrainArgs),
    /// Evaluate DI and FID of a checkpoint.
    Eval(EvalArgs),
    /// Discriminator attention maps for a generated or given image.
    Attn(AttnArgs),
    /// Sample grid: rows share a heatmap pyramid, columns a latent.
    Sample(SampleArgs),
    /// Render a heatmap pyramid.
    Heatmap(HeatmapArgs),
    /// Plot real/fake score curves of a run.
    Curves(CurvesArgs),
    /// Serve the editing API for a checkpoint.
    Serve(ServeArgs),
    /// Train baseline, SEL+alignment and noise arms over several seeds and
    /// judge the outcome.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config file; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set steps=2000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<TrainConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        Ok(TrainConfig::load(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory; defaults to `runs/<config hash>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint instead of starting fresh. Config flags
    /// are ignored; the checkpoint carries its own.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Report path; defaults to `<checkpoint stem>_eval.json` beside the
    /// checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    pub checkpoint: PathBuf,
    /// Image file to explain instead of a generated one.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Latent and heatmap seed of the generated image.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Discriminator taps, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = ["d4".to_string(), "d8".to_string(), "d16".to_string()])]
    pub taps: Vec<String>,
    #[arg(long, default_value = "attn")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub rows: usize,
    #[arg(long, default_value_t = 4)]
    pub cols: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pyramid record (JSON, as written by `heatmap`) for one row,
    /// repeatable. When any is given, row `i` without a record uses the
    /// pyramid `heatmap --seed <seed + i>` draws.
    #[arg(long)]
    pub pyramid: Vec<PathBuf>,
    #[arg(long, default_value = "sample.png")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub base_res: usize,
    /// Level-0 variance; each finer level divides it by sqrt(2).
    #[arg(long, default_value_t = 0.5)]
    pub var0: f64,
    /// Centers per level.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1usize, 2, 4])]
    pub counts: Vec<usize>,
    /// Re-render a pyramid record instead of sampling.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long, default_value = "heatmap")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// Run directory holding `metrics.jsonl`.
    pub run: PathBuf,
    /// SVG path; defaults to `<run>/curves.svg`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Allowed CORS origin. Repeatable; none allows any origin.
    #[arg(long = "origin")]
    pub origins: Vec<String>,
    /// Seed of the `/reset` stream; random when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value = "experiment")]
    pub out: PathBuf,
}

/// Config keys with their defaults, for `--help`.
pub fn config_keys_help() -> String {
    let mut s = String::from("Config keys (for --config files and --set):\n");
    for (k, v) in TrainConfig::keys() {
        s.push_str(&format!("  {k} = {v}\n"));
    }
    s
}

/// The clap command with the config key listing attached.
pub fn command() -> clap::Command {
    let keys = config_keys_help();
    Cli::command()
        .after_long_help(keys.clone())
        .mut_subcommand("train", |c| c.after_help(keys.clone()))
        .mut_subcommand("experiment", |c| c.after_help(keys.clone()))
}

pub fn parse_from<I, T>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Runs every subcommand except `serve`, returning the files written.
pub fn run(command: &Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Attn(a) => cmd_attn(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Curves(a) => cmd_curves(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Serve(_) => Err(CliError::Usage("serve runs through cmd_serve".into())),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<Vec<PathBuf>> {
    let extractor = FeatureExtractor::shipped();
    let (state, default_dir) = match &args.resume {
        Some(ckpt) => {
            let state = TrainState::load(ckpt)?;
            let dir = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
            (state, dir)
        }
        None => {
            let cfg = args.config.load()?;
            let dir = PathBuf::from("runs").join(cfg.hash());
            (TrainState::new(cfg)?, dir)
        }
    };
    let dir = args.out.clone().unwrap_or(default_dir);
    let out = run_training(state, &dir, &extractor)?;
    let mut files = out.files;
    files.push(out.final_checkpoint);
    Ok(files)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<PathBuf>> {
    let state = TrainState::load(&args.checkpoint)?;
    let report = evaluate(&state, &FeatureExtractor::shipped())?;
    let path = args.out.clone().unwrap_or_else(|| {
        let stem = args.checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
        args.checkpoint.with_file_name(format!("{stem}_eval.json"))
    });
    write_json(&path, &report)?;
    Ok(vec![path])
}

/// The image a checkpoint generates for `seed`: the latent is drawn from
/// `ChaCha8(seed)` and the heatmap pyramid from `seed`, the same way the
/// edit service does.
pub fn generate_seeded(snapshot: &Snapshot, seed: u64) -> Result<(Tensor, Option<HeatmapPyramid>)> {
    let cfg = &snapshot.config;
    let z = sample_latents(1, cfg.latent_dim, &mut ChaCha8Rng::seed_from_u64(seed));
    let (spatial, pyramid) = if !cfg.uses_heatmaps() {
        (None, None)
    } else if cfg.heatmap_mode == HeatmapMode::GaussianNoise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        (sample_spatial(cfg, 1, &mut rng)?, None)
    } else {
        let p = HeatmapPyramid::sample_seeded(cfg.base_res, &cfg.heatmap_spec(), seed)?;
        (Some(SpatialBatch::from_pyramids(std::slice::from_ref(&p))?), Some(p))
    };
    Ok((snapshot.generate(&z, spatial.as_ref())?, pyramid))
}

#[derive(Serialize)]
struct AttnRecord {
    checkpoint_hash: String,
    source: String,
    taps: Vec<TapRecord>,
}

#[derive(Serialize)]
struct TapRecord {
    tap: String,
    res: usize,
    /// Raw GradCAM map, row-major.
    map: Vec<f64>,
}

pub fn cmd_attn(args: &AttnArgs) -> Result<Vec<PathBuf>> {
    let snap = Snapshot::load(&args.checkpoint)?;
    let cfg = &snap.config;
    let (c, res) = (cfg.image_channels(), cfg.base_res);
    let (image, source) = match &args.image {
        Some(path) => {
            let rgb = load_image(path, res)?;
            let data = if c == 1 {
                let plane = res * res;
                (0..plane).map(|i| (rgb[i] + rgb[plane + i] + rgb[2 * plane + i]) / 3.0).collect()
            } else {
                rgb
            };
            let t = Tensor::from_vec(data, &[1, c, res, res]).map_err(|e| eqgan::Error::Shape(e.to_string()))?;
            (t, path.display().to_string())
        }
        None => (generate_seeded(&snap, args.seed)?.0, format!("seed {}", args.seed)),
    };
    let taps: Vec<&str> = args.taps.iter().map(String::as_str).collect();
    let maps = gradcam(&snap.d, &image, &taps, GradCamOptions::default())?;
    std::fs::create_dir_all(&args.out)?;
    let hash = snap.file_hash.clone();
    let text = [("checkpoint_hash", hash.as_str()), ("source", source.as_str())];
    let mut files = Vec::new();
    let path = args.out.join("image.png");
    image_raster(image.data(), c, res)?.save_png(&path, &text)?;
    files.push(path);
    let mut records = Vec::new();
    for (tap, m) in taps.iter().zip(&maps) {
        let r = m.dim(1);
        let norm = normalize_max1(m);
        let path = args.out.join(format!("attn_{tap}.png"));
        overlay_raster(image.data(), c, res, norm.data(), r, OVERLAY_ALPHA)?.save_png(&path, &text)?;
        files.push(path);
        let path = args.out.join(format!("attn_{tap}_map.png"));
        map_raster(norm.data(), r, (res / r).max(1)).save_png(&path, &text)?;
        files.push(path);
        records.push(TapRecord { tap: tap.to_string(), res: r, map: m.data().to_vec() });
    }
    let path = args.out.join("attn.json");
    write_json(&path, &AttnRecord { checkpoint_hash: hash, source, taps: records })?;
    files.push(path);
    Ok(files)
}

pub fn cmd_sample(args: &SampleArgs) -> Result<Vec<PathBuf>> {
    if args.rows == 0 || args.cols == 0 {
        return Err(CliError::Usage("rows and cols must be positive".into()));
    }
    if args.pyramid.len() > args.rows {
        return Err(CliError::Usage(format!("{} pyramids for {} rows", args.pyramid.len(), args.rows)));
    }
    let snap = Snapshot::load(&args.checkpoint)?;
    let cfg = &snap.config;
    if !args.pyramid.is_empty() && (!cfg.uses_heatmaps() || cfg.heatmap_mode == HeatmapMode::GaussianNoise) {
        return Err(CliError::Usage("this checkpoint does not take heatmap pyramids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut spatial = sample_spatial(cfg, args.rows, &mut rng)?;
    let z = sample_latents(args.cols, cfg.latent_dim, &mut rng);
    if !args.pyramid.is_empty() {
        let pyramids = (0..args.rows)
            .map(|row| match args.pyramid.get(row) {
                Some(path) => {
                    let rec: PyramidRecord = serde_json::from_slice(&std::fs::read(path)?)?;
                    Ok(HeatmapPyramid::from_record(&rec)?)
                }
                None => Ok(HeatmapPyramid::sample_seeded(cfg.base_res, &cfg.heatmap_spec(), args.seed + row as u64)?),
            })
            .collect::<Result<Vec<_>>>()?;
        spatial = Some(SpatialBatch::from_pyramids(&pyramids)?);
    }
    let (z, spatial) = grid_batch(&z, spatial.as_ref(), args.rows, args.cols);
    let images = snap.generate(&z, spatial.as_ref())?;
    ensure_parent(&args.out)?;
    let seed = args.seed.to_string();
    grid_raster(&images, args.rows, args.cols, 1)?
        .save_png(&args.out, &[("checkpoint_hash", &snap.file_hash), ("seed", &seed)])?;
    Ok(vec![args.out.clone()])
}

pub fn cmd_heatmap(args: &HeatmapArgs) -> Result<Vec<PathBuf>> {
    let pyramid = match &args.from {
        Some(path) => HeatmapPyramid::from_record(&serde_json::from_slice(&std::fs::read(path)?)?)?,
        None => {
            let counts: [usize; 3] = args
                .counts
                .clone()
                .try_into()
                .map_err(|_| CliError::Usage("counts takes three values".into()))?;
            HeatmapPyramid::sample_seeded(args.base_res, &HeatmapSpec { var0: args.var0, counts }, args.seed)?
        }
    };
    std::fs::create_dir_all(&args.out)?;
    let mut files = Vec::new();
    for (l, level) in pyramid.levels.iter().enumerate() {
        let scale = (pyramid.base_res / level.resolution).max(1);
        let clipped: Vec<f64> = level_sum(level).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let path = args.out.join(format!("level{l}.png"));
        map_raster(&clipped, level.resolution, scale).save_png(&path, &[])?;
        files.push(path);
        for i in 0..level.count() {
            let path = args.out.join(format!("level{l}_{i}.png"));
            map_raster(level.map(i), level.resolution, scale).save_png(&path, &[])?;
            files.push(path);
        }
    }
    let path = args.out.join("pyramid.json");
    write_json(&path, &pyramid.to_record())?;
    files.push(path);
    debug_assert_eq!(LEVEL_RESOLUTIONS.len(), pyramid.levels.len());
    Ok(files)
}

pub fn cmd_curves(args: &CurvesArgs) -> Result<Vec<PathBuf>> {
    let log: Vec<MetricsRecord> = read_log(&args.run.join("metrics.jsonl"))?;
    let path = args.out.clone().unwrap_or_else(|| args.run.join("curves.svg"));
    ensure_parent(&path)?;
    std::fs::write(&path, curves_svg(&score_curves(&log), 640, 360))?;
    Ok(vec![path])
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<Vec<PathBuf>> {
    let base = args.config.load()?;
    let report = run_experiment(&base, &args.seeds, &args.out, &FeatureExtractor::shipped())?;
    for v in &report.verdicts {
        eprintln!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    let path = args.out.join("report.json");
    write_json(&path, &report)?;
    let mut files = vec![path];
    files.extend(report.results.iter().map(|r| r.run_dir.clone()));
    Ok(files)
}

/// Serves until the process is stopped, printing the bound address first.
pub fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let opts = edit_service::ServeOptions {
        checkpoint: args.checkpoint.clone(),
        addr: args.addr,
        origins: args.origins.clone(),
        reset_seed: args.seed,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(edit_service::serve(opts, |addr| println!("http://{addr}")))?;
    Ok(())
}
