//! Adversarial losses, the R1 penalty and the attention alignment loss.

use autograd::{grad, Tensor};
use serde::{Deserialize, Serialize};

use crate::attention::{gradcam_from_output, normalize_max1, GradCamOptions};
use crate::error::{Error, Result};
use crate::heatmap::LEVEL_RESOLUTIONS;
use crate::nets::{Critic, CriticOutput};

/// Discriminator loss `mean softplus(-s_real) + mean softplus(s_fake)`.
pub fn d_loss(real: &Tensor, fake: &Tensor) -> Tensor {
    real.neg().softplus().mean() + fake.softplus().mean()
}

/// Non-saturating generator loss `mean softplus(-s_fake)`.
pub fn g_loss(fake: &Tensor) -> Tensor {
    fake.neg().softplus().mean()
}

pub fn adv_losses(real: &Tensor, fake: &Tensor) -> (Tensor, Tensor) {
    (d_loss(real, fake), g_loss(fake))
}

/// `(gamma / 2) * mean_i ||d score_i / d x_i||^2` on real images. The result
/// stays differentiable in the critic's parameters.
pub fn r1_penalty(critic: &dyn Critic, real: &Tensor, gamma: f64) -> Result<Tensor> {
    let x = real.detach_param();
    let scores = critic.score(&x)?;
    r1_from_scores(&scores, &x, gamma)
}

/// R1 from scores already computed on the tracked input `x`, so the
/// discriminator's real-image forward pass can be shared with its loss.
pub fn r1_from_scores(scores: &Tensor, x: &Tensor, gamma: f64) -> Result<Tensor> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("r1 gamma must be >= 0, got {gamma}")));
    }
    let g = grad(&scores.sum(), &[x], true).remove(0);
    let n = x.dim(0) as f64;
    Ok(g.square().sum().scale(gamma / (2.0 * n)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub tau: f64,
    pub weight: f64,
    /// Heatmap levels compared against attention, subset of `{0, 1, 2}`.
    pub levels: Vec<usize>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { tau: 0.25, weight: 1.0, levels: vec![0, 1, 2] }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !(self.weight >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "align tau and weight must be >= 0, got tau={} weight={}",
                self.tau, self.weight
            )));
        }
        if self.levels.is_empty() || self.levels.iter().any(|&l| l >= LEVEL_RESOLUTIONS.len()) {
            return Err(Error::InvalidArgument(format!("align levels must be a non-empty subset of 0..=2, got {:?}", self.levels)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AlignOutput {
    /// Weighted batch mean after truncation.
    pub loss: Tensor,
    /// Batch mean after truncation, before weighting.
    pub value: f64,
    /// Untruncated per-sample distances, before weighting.
    pub per_sample: Vec<f64>,
    /// Samples at or above `tau`.
    pub kept: usize,
}

/// Per-sample truncation: values strictly below `tau` become zero, the rest
/// pass through unchanged.
pub fn truncate(per_sample: &Tensor, tau: f64) -> Tensor {
    let keep: Vec<f64> = per_sample.data().iter().map(|&v| if v < tau { 0.0 } else { 1.0 }).collect();
    let mask = Tensor::from_vec(keep, per_sample.shape()).expect("same size");
    per_sample.mul_const(&mask)
}

/// Mean absolute difference between max-normalized attention maps and
/// target heatmaps, averaged over levels, truncated below `tau`.
///
/// `attention[k]` and `targets[k]` are `[N, h, w]` for `cfg.levels[k]`.
pub fn alignment_from_maps(attention: &[Tensor], targets: &[Tensor], cfg: &AlignConfig) -> Result<AlignOutput> {
    if attention.len() != targets.len() || attention.is_empty() {
        return Err(Error::Shape(format!(
            "{} attention levels against {} targets",
            attention.len(),
            targets.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (a, t) in attention.iter().zip(targets) {
        if a.shape() != t.shape() {
            return Err(Error::Shape(format!("attention {:?} vs target {:?}", a.shape(), t.shape())));
        }
        let d = (a - t).abs().mean_axes(&[1, 2], false);
        total = Some(match total {
            Some(acc) => acc + d,
            None => d,
        });
    }
    let per_sample = total.expect("non-empty").scale(1.0 / attention.len() as f64);
    let values = per_sample.to_vec();
    let kept = values.iter().filter(|&&v| v >= cfg.tau).count();
    let truncated = truncate(&per_sample, cfg.tau).mean();
    let value = truncated.item();
    Ok(AlignOutput { loss: truncated.scale(cfg.weight), value, per_sample: values, kept })
}

/// Alignment loss of generated `images` against per-level targets
/// (`targets[l]` is the clipped level sum `[N, r_l, r_l]` for level `l`).
///
/// Attention comes from the critic's tap whose spatial size matches each
/// level. Pass a frozen critic during generator steps: gradient then flows
/// only into `images`.
pub fn alignment_loss(critic: &dyn Critic, images: &Tensor, targets: &[Tensor], cfg: &AlignConfig) -> Result<AlignOutput> {
    let x = if images.requires_grad() { images.clone() } else { images.detach_param() };
    alignment_from_output(&critic.critique(&x)?, targets, cfg)
}

/// Same as [`alignment_loss`] on a forward pass the caller already ran, so
/// the adversarial term can share it.
pub fn alignment_from_output(out: &CriticOutput, targets: &[Tensor], cfg: &AlignConfig) -> Result<AlignOutput> {
    cfg.validate()?;
    let mut names = Vec::with_capacity(cfg.levels.len());
    for &l in &cfg.levels {
        let r = LEVEL_RESOLUTIONS[l];
        let name = out
            .taps
            .iter()
            .find(|(_, t)| t.rank() == 4 && t.dim(2) == r && t.dim(3) == r)
            .map(|(n, _)| n.as_str())
            .ok_or(Error::MissingTapForLevel(r))?;
        names.push(name);
    }
    let opts = GradCamOptions { differentiable: true, minimize: false };
    let raw = gradcam_from_output(out, &names, opts)?;
    let attention: Vec<Tensor> = raw.iter().map(normalize_max1).collect();
    let level_targets = cfg
        .levels
        .iter()
        .map(|&l| {
            targets
                .get(l)
                .map(|t| t.detach())
                .ok_or_else(|| Error::InvalidArgument(format!("no target heatmap for level {l}")))
        })
        .collect::<Result<Vec<_>>>()?;
    alignment_from_maps(&attention, &level_targets, cfg)
}
