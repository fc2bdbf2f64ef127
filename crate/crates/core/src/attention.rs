//! GradCAM over discriminator taps.
//!
//! Channel weights are the spatial mean of the score's gradient with respect
//! to the tap activation; the map is the ReLU of the weighted channel sum.
//! Gradients are taken for increasing the score. Nothing here touches the
//! critic's parameters.

use autograd::{grad, no_grad, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Critic, CriticOutput};

pub const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapNorm {
    Raw,
    Max1,
}

/// One sample's attention at one tap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub tap: String,
    pub resolution: usize,
    /// Row-major `resolution x resolution`.
    pub values: Vec<f64>,
    pub norm: MapNorm,
}

impl AttentionMap {
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[derive(Default)]
pub struct GradCamOptions {
    /// Keep the map differentiable with respect to the input image.
    pub differentiable: bool,
    /// Use the gradient of the negated score instead. Only meant for
    /// robustness probes; training always maximizes.
    #[doc(hidden)]
    pub minimize: bool,
}


/// Raw maps `[N, h, w]` for the named taps of an already computed forward
/// pass. The input must have been tracked for the taps to carry a graph.
pub fn gradcam_from_output(out: &CriticOutput, taps: &[&str], opts: GradCamOptions) -> Result<Vec<Tensor>> {
    let acts = taps
        .iter()
        .map(|&name| out.taps.get(name).ok_or_else(|| Error::UnknownTap(name.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut objective = out.scores.sum();
    if opts.minimize {
        objective = objective.neg();
    }
    let grads = grad(&objective, &acts, opts.differentiable);
    let build = || {
        acts.iter()
            .zip(&grads)
            .map(|(a, g)| {
                let weights = g.mean_axes(&[2, 3], true);
                (&weights * *a).sum_axes(&[1], false).relu()
            })
            .collect::<Vec<_>>()
    };
    Ok(if opts.differentiable { build() } else { no_grad(build) })
}

/// Runs the critic on `x` and returns raw maps `[N, h, w]` per tap.
pub fn gradcam(critic: &dyn Critic, x: &Tensor, taps: &[&str], opts: GradCamOptions) -> Result<Vec<Tensor>> {
    // a fresh tracked leaf when the caller's input carries no graph, so the
    // taps always have one to differentiate through
    let input = if opts.differentiable && x.requires_grad() { x.clone() } else { x.detach_param() };
    let out = critic.critique(&input)?;
    gradcam_from_output(&out, taps, opts)
}

/// Divides each sample's map by `max + eps`. All-zero maps stay zero.
pub fn normalize_max1(maps: &Tensor) -> Tensor {
    let peak = maps.max_axes(&[1, 2], true);
    maps / &peak.add_scalar(NORMALIZE_EPS)
}

/// Splits a batch of raw maps into per-sample records.
pub fn to_attention_maps(tap: &str, maps: &Tensor, norm: MapNorm) -> Vec<AttentionMap> {
    let n = maps.dim(0);
    let res = maps.dim(1);
    let plane = res * maps.dim(2);
    (0..n)
        .map(|i| AttentionMap {
            tap: tap.to_string(),
            resolution: res,
            values: maps.data()[i * plane..(i + 1) * plane].to_vec(),
            norm,
        })
        .collect()
}

/// Max-normalized copy of a single map.
pub fn normalize_map(map: &AttentionMap) -> AttentionMap {
    let scale = map.max() + NORMALIZE_EPS;
    AttentionMap {
        tap: map.tap.clone(),
        resolution: map.resolution,
        values: map.values.iter().map(|v| v / scale).collect(),
        norm: MapNorm::Max1,
    }
}
