//! Small convolutional generator and discriminator.
//!
//! The generator maps a latent code to a `[-1, 1]` image through
//! upsample+conv blocks, one per resolution from 4 up to `base_res`, with a
//! spatial encoding layer after each block whose level is enabled. The
//! discriminator mirrors it downward and records the activation at every
//! resolution (before pooling) so attention can be computed from it.

use std::collections::BTreeMap;

use autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{SpatialBatch, LEVEL_RESOLUTIONS};
use crate::layers::{lrelu_gain, visit_child, visit_child_mut, Conv2d, Dense, Parameterized, LRELU_SLOPE};
use crate::sel::{flatten_condition, Sel, SelDims, SelVariant};

/// How heatmaps reach the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Plain GAN: no heatmaps at all.
    None,
    Norm,
    Concat,
    /// Level sums appended to the latent code; no SEL layers.
    Flatten,
}

impl Conditioning {
    pub fn sel_variant(self) -> Option<SelVariant> {
        match self {
            Conditioning::Norm => Some(SelVariant::Norm),
            Conditioning::Concat => Some(SelVariant::Concat),
            Conditioning::None | Conditioning::Flatten => None,
        }
    }

    pub fn uses_heatmaps(self) -> bool {
        self != Conditioning::None
    }
}

/// Number of blocks from 4x4 up to `base_res`.
pub fn block_count(base_res: usize) -> Result<usize> {
    if base_res < 16 || !base_res.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "base_res must be a power of two >= 16, got {base_res}"
        )));
    }
    Ok(base_res.trailing_zeros() as usize - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub base_res: usize,
    pub out_ch: usize,
    /// Feature channels per resolution, 4x4 first.
    pub channels: Vec<usize>,
    pub conditioning: Conditioning,
    pub sel_levels: Vec<usize>,
    pub sel_dims: SelDims,
    /// Sub-heatmaps per level.
    pub counts: [usize; 3],
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let blocks = block_count(self.base_res)?;
        if self.channels.len() != blocks {
            return Err(Error::InvalidArgument(format!(
                "generator needs {blocks} channel entries for base_res {}, got {}",
                self.base_res,
                self.channels.len()
            )));
        }
        if let Some(&l) = self.sel_levels.iter().find(|&&l| l >= LEVEL_RESOLUTIONS.len()) {
            return Err(Error::InvalidArgument(format!("SEL level {l} out of range 0..=2")));
        }
        if self.latent_dim == 0 || self.out_ch == 0 || self.channels.contains(&0) {
            return Err(Error::InvalidArgument("generator dimensions must be positive".into()));
        }
        Ok(())
    }

    fn dense_inputs(&self) -> usize {
        match self.conditioning {
            Conditioning::Flatten => self.latent_dim + LEVEL_RESOLUTIONS.iter().map(|r| r * r).sum::<usize>(),
            _ => self.latent_dim,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub spec: GeneratorSpec,
    input: Dense,
    blocks: Vec<Conv2d>,
    /// One slot per block; only levels 0..=2 can hold a layer.
    sels: Vec<Option<Sel>>,
    to_image: Conv2d,
}

/// RNG streams used at construction, kept apart so enabling SEL layers
/// leaves the backbone's initial weights untouched.
const BACKBONE_STREAM: u64 = 0;
const SEL_STREAM: u64 = 1;

impl Generator {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Generator> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(BACKBONE_STREAM);
        let c0 = spec.channels[0];
        let input = Dense::new(spec.dense_inputs(), c0 * 16, 1.0, &mut rng);
        let mut blocks = Vec::with_capacity(spec.channels.len());
        let mut prev = c0;
        for &c in &spec.channels {
            blocks.push(Conv2d::new(prev, c, 3, lrelu_gain(), &mut rng));
            prev = c;
        }
        let to_image = Conv2d::new(prev, spec.out_ch, 1, 1.0, &mut rng);

        let mut sel_rng = ChaCha8Rng::seed_from_u64(seed);
        sel_rng.set_stream(SEL_STREAM);
        let sels = (0..blocks.len())
            .map(|level| {
                let variant = spec.conditioning.sel_variant()?;
                spec.sel_levels.contains(&level).then(|| {
                    Sel::new(
                        variant,
                        LEVEL_RESOLUTIONS[level],
                        spec.channels[level],
                        spec.counts[level],
                        spec.sel_dims,
                        &mut sel_rng,
                    )
                })
            })
            .collect();
        Ok(Generator { spec, input, blocks, sels, to_image })
    }

    pub fn sel(&self, level: usize) -> Option<&Sel> {
        self.sels.get(level).and_then(|s| s.as_ref())
    }

    pub fn sel_mut(&mut self, level: usize) -> Option<&mut Sel> {
        self.sels.get_mut(level).and_then(|s| s.as_mut())
    }

    /// `z: [N, latent_dim]` to images `[N, out_ch, base_res, base_res]`.
    /// `spatial` is required whenever the conditioning uses heatmaps.
    pub fn forward(&self, z: &Tensor, spatial: Option<&SpatialBatch>) -> Result<Tensor> {
        if z.rank() != 2 || z.dim(1) != self.spec.latent_dim {
            return Err(Error::Shape(format!(
                "latent must be [N, {}], got {:?}",
                self.spec.latent_dim,
                z.shape()
            )));
        }
        let n = z.dim(0);
        let spatial = match (self.spec.conditioning.uses_heatmaps(), spatial) {
            (false, _) => None,
            (true, Some(s)) => {
                if s.len() != n {
                    return Err(Error::Shape(format!("{} heatmap sets for a batch of {n}", s.len())));
                }
                Some(s)
            }
            (true, None) => {
                return Err(Error::InvalidArgument("this generator needs heatmaps".into()));
            }
        };
        let input = match (self.spec.conditioning, spatial) {
            (Conditioning::Flatten, Some(s)) => flatten_condition(z, &s.maps)?,
            _ => z.clone(),
        };
        let c0 = self.spec.channels[0];
        let mut h = self.input.forward(&input).reshape(&[n, c0, 4, 4]).leaky_relu(LRELU_SLOPE);
        for (i, conv) in self.blocks.iter().enumerate() {
            if i > 0 {
                h = h.upsample2x();
            }
            h = conv.forward(&h).leaky_relu(LRELU_SLOPE);
            if let (Some(sel), Some(s)) = (&self.sels[i], spatial) {
                let maps = &s.maps[i];
                if maps.dim(1) != sel.hm_channels {
                    return Err(Error::Shape(format!(
                        "level {i} has {} sub-heatmaps, SEL expects {}",
                        maps.dim(1),
                        sel.hm_channels
                    )));
                }
                h = sel.forward(&h, maps)?;
            }
        }
        Ok(self.to_image.forward(&h).tanh())
    }
}

impl Parameterized for Generator {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_child("input", &self.input, f);
        for (i, b) in self.blocks.iter().enumerate() {
            visit_child(&format!("block{i}"), b, f);
        }
        for (i, s) in self.sels.iter().enumerate() {
            if let Some(s) = s {
                visit_child(&format!("sel{i}"), s, f);
            }
        }
        visit_child("to_image", &self.to_image, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_child_mut("input", &mut self.input, f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            visit_child_mut(&format!("block{i}"), b, f);
        }
        for (i, s) in self.sels.iter_mut().enumerate() {
            if let Some(s) = s {
                visit_child_mut(&format!("sel{i}"), s, f);
            }
        }
        visit_child_mut("to_image", &mut self.to_image, f);
    }
}

/// Scores plus the recorded intermediate activations.
#[derive(Clone, Debug)]
pub struct CriticOutput {
    /// `[N]` pre-sigmoid logits.
    pub scores: Tensor,
    /// Tap name to `[N, C, h, w]` activation.
    pub taps: BTreeMap<String, Tensor>,
}

/// Anything that scores images and exposes named activations.
pub trait Critic {
    fn critique(&self, x: &Tensor) -> Result<CriticOutput>;

    fn score(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.critique(x)?.scores)
    }
}

pub fn tap_name(res: usize) -> String {
    format!("d{res}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_ch: usize,
    pub base_res: usize,
    /// Channels per resolution, `base_res` first, 4x4 last.
    pub channels: Vec<usize>,
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        let blocks = block_count(self.base_res)?;
        if self.channels.len() != blocks {
            return Err(Error::InvalidArgument(format!(
                "discriminator needs {blocks} channel entries for base_res {}, got {}",
                self.base_res,
                self.channels.len()
            )));
        }
        if self.in_ch == 0 || self.channels.contains(&0) {
            return Err(Error::InvalidArgument("discriminator dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn resolutions(&self) -> Vec<usize> {
        (0..self.channels.len()).map(|i| self.base_res >> i).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    blocks: Vec<Conv2d>,
    head: Dense,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Discriminator> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prev = spec.in_ch;
        let mut blocks = Vec::with_capacity(spec.channels.len());
        for &c in &spec.channels {
            blocks.push(Conv2d::new(prev, c, 3, lrelu_gain(), &mut rng));
            prev = c;
        }
        let head = Dense::new(prev * 16, 1, 1.0, &mut rng);
        Ok(Discriminator { spec, blocks, head })
    }

    pub fn tap_names(&self) -> Vec<String> {
        self.spec.resolutions().into_iter().map(tap_name).collect()
    }
}

impl Critic for Discriminator {
    fn critique(&self, x: &Tensor) -> Result<CriticOutput> {
        let r = self.spec.base_res;
        let s = x.shape();
        if s.len() != 4 || s[1] != self.spec.in_ch || s[2] != r || s[3] != r {
            return Err(Error::Shape(format!(
                "discriminator expects [N, {}, {r}, {r}], got {s:?}",
                self.spec.in_ch
            )));
        }
        let n = s[0];
        let mut taps = BTreeMap::new();
        let mut h = x.clone();
        let last = self.blocks.len() - 1;
        for (i, conv) in self.blocks.iter().enumerate() {
            h = conv.forward(&h).leaky_relu(LRELU_SLOPE);
            taps.insert(tap_name(r >> i), h.clone());
            if i < last {
                h = h.avg_pool2x();
            }
        }
        let flat = h.reshape(&[n, h.numel() / n]);
        let scores = self.head.forward(&flat).reshape(&[n]);
        Ok(CriticOutput { scores, taps })
    }
}

impl Parameterized for Discriminator {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            visit_child(&format!("block{i}"), b, f);
        }
        visit_child("head", &self.head, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            visit_child_mut(&format!("block{i}"), b, f);
        }
        visit_child_mut("head", &mut self.head, f);
    }
}
