//! Run configuration: one flat table of keys, loaded from TOML with
//! `key=value` overrides on top. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::BlobSpec;
use crate::error::{Error, Result};
use crate::heatmap::{HeatmapMode, HeatmapSpec};
use crate::losses::AlignConfig;
use crate::nets::{Conditioning, DiscriminatorSpec, GeneratorSpec};
use crate::sel::SelDims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Folder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    /// Image directory when `dataset = "folder"`.
    pub data_dir: String,
    pub flips: bool,
    pub blob_std: f64,
    pub blob_margin: f64,
    pub blob_intensity: f64,
    pub blob_noise: f64,
    pub blob_background: f64,

    pub base_res: usize,
    pub latent_dim: usize,
    pub g_channels: Vec<usize>,
    pub d_channels: Vec<usize>,
    pub sel_variant: Conditioning,
    pub sel_levels: Vec<usize>,
    pub sel_inter_dim: usize,
    pub sel_concat_hidden: usize,

    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub r1_gamma: f64,

    pub align_tau: f64,
    pub align_weight: f64,
    pub align_levels: Vec<usize>,
    /// Steps before the alignment loss is switched on.
    pub align_warmup: u64,

    pub heatmap_mode: HeatmapMode,
    pub var0: f64,
    pub counts: [usize; 3],

    /// Evaluate every this many steps (0: only after the last step).
    pub eval_every: u64,
    /// Real and generated images scored per evaluation.
    pub eval_pool: usize,
    pub di_repeats: usize,
    pub di_per_side: usize,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub grid_rows: usize,
    pub grid_cols: usize,

    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetKind::Blobs,
            data_dir: String::new(),
            flips: false,
            blob_std: 3.0,
            blob_margin: 6.0,
            blob_intensity: 1.0,
            blob_noise: 0.0,
            blob_background: 0.0,
            base_res: 32,
            latent_dim: 64,
            g_channels: vec![16, 16, 8, 4],
            d_channels: vec![4, 8, 16, 16],
            sel_variant: Conditioning::Norm,
            sel_levels: vec![0, 1, 2],
            sel_inter_dim: 16,
            sel_concat_hidden: 64,
            batch_size: 16,
            steps: 5000,
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            adam_eps: 1e-8,
            r1_gamma: 1.0,
            align_tau: 0.25,
            align_weight: 1.0,
            align_levels: vec![0, 1, 2],
            align_warmup: 0,
            heatmap_mode: HeatmapMode::Hierarchical,
            var0: 0.5,
            counts: [1, 2, 4],
            eval_every: 1000,
            eval_pool: 2000,
            di_repeats: 200,
            di_per_side: 64,
            checkpoint_every: 1000,
            log_every: 10,
            grid_rows: 3,
            grid_cols: 4,
            seed: 0,
        }
    }
}

/// Turns a command-line value into a TOML value: anything that does not
/// parse as TOML is taken as a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl TrainConfig {
    /// Parses a TOML document, then applies `key=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<TrainConfig> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let known = Self::keys();
        for ov in overrides {
            let (k, v) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            let k = k.trim();
            if !known.iter().any(|(name, _)| name == k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            table.insert(k.to_string(), parse_value(v.trim()));
        }
        let cfg: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        TrainConfig::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Every key with its default, sorted by name.
    pub fn keys() -> Vec<(String, String)> {
        let v = toml::Value::try_from(TrainConfig::default()).expect("serializes");
        let json: serde_json::Value = serde_json::to_value(TrainConfig::default()).expect("serializes");
        let table = v.as_table().expect("table");
        json.as_object()
            .expect("object")
            .keys()
            .map(|k| (k.clone(), table.get(k).map(|v| v.to_string()).unwrap_or_default()))
            .collect()
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("bad optimizer settings lr={} betas=({}, {})", self.lr, self.beta1, self.beta2));
        }
        if self.r1_gamma < 0.0 {
            return bad("r1_gamma must be >= 0".into());
        }
        if self.dataset == DatasetKind::Folder && self.data_dir.is_empty() {
            return bad("dataset = \"folder\" needs data_dir".into());
        }
        if self.eval_pool < self.di_per_side {
            return bad(format!("eval_pool {} is smaller than di_per_side {}", self.eval_pool, self.di_per_side));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return bad("grid_rows and grid_cols must be positive".into());
        }
        self.align().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.heatmap_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.generator_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.discriminator_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.dataset == DatasetKind::Blobs {
            self.blob_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn image_channels(&self) -> usize {
        match self.dataset {
            DatasetKind::Blobs => 1,
            DatasetKind::Folder => 3,
        }
    }

    pub fn blob_spec(&self) -> BlobSpec {
        BlobSpec {
            res: self.base_res,
            blob_std: self.blob_std,
            margin: self.blob_margin,
            intensity: self.blob_intensity,
            noise_std: self.blob_noise,
            background: self.blob_background,
        }
    }

    pub fn heatmap_spec(&self) -> HeatmapSpec {
        HeatmapSpec { var0: self.var0, counts: self.counts }
    }

    pub fn align(&self) -> AlignConfig {
        AlignConfig { tau: self.align_tau, weight: self.align_weight, levels: self.align_levels.clone() }
    }

    /// Whether heatmaps are drawn at all (the plain baseline draws none).
    pub fn uses_heatmaps(&self) -> bool {
        self.sel_variant.uses_heatmaps()
    }

    /// Whether the alignment loss is evaluated (needs heatmap targets).
    pub fn uses_alignment(&self) -> bool {
        self.uses_heatmaps()
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            latent_dim: self.latent_dim,
            base_res: self.base_res,
            out_ch: self.image_channels(),
            channels: self.g_channels.clone(),
            conditioning: self.sel_variant,
            sel_levels: self.sel_levels.clone(),
            sel_dims: SelDims { inter_dim: self.sel_inter_dim, concat_hidden: self.sel_concat_hidden },
            counts: self.counts,
        }
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec { in_ch: self.image_channels(), base_res: self.base_res, channels: self.d_channels.clone() }
    }
}
