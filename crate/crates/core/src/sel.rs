//! Spatial encoding layers: inject a level's sub-heatmaps into a generator
//! feature map.
//!
//! `Norm` instance-normalizes the features and re-modulates them with
//! point-wise scale and shift fields predicted from the heatmaps:
//!
//! ```text
//! dx  = (1 + sigma(H)) * instnorm(F) + mu(H)
//! out = F + 0.1 * post(lrelu(dx))
//! ```
//!
//! `Concat` appends heatmap features to `F` and fuses them with two convs
//! before the same scaled residual. The final `post` conv starts at zero, so
//! a fresh layer is an exact identity.

use autograd::Tensor;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{lrelu_gain, visit_child, visit_child_mut, Conv2d, Parameterized, LRELU_SLOPE};

pub const RESIDUAL_SCALE: f64 = 0.1;
pub const INSTANCE_NORM_EPS: f64 = 1e-5;
pub const KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelVariant {
    Norm,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelDims {
    /// Channels of the heatmap feature extractor.
    pub inter_dim: usize,
    /// Hidden width of the concat variant's fusion convs.
    pub concat_hidden: usize,
}

impl Default for SelDims {
    fn default() -> Self {
        SelDims { inter_dim: 64, concat_hidden: 256 }
    }
}

#[derive(Clone, Debug)]
enum Body {
    Norm { sigma: Conv2d, mu: Conv2d },
    Concat { fuse: Conv2d, fuse_out: Conv2d },
}

#[derive(Clone, Debug)]
pub struct Sel {
    pub resolution: usize,
    pub channels: usize,
    pub hm_channels: usize,
    pub extract: Conv2d,
    body: Body,
    pub post: Conv2d,
}

/// Intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct SelTrace {
    pub output: Tensor,
    /// Instance-normalized input (norm variant only).
    pub normalized: Option<Tensor>,
    /// `[N, 1, H, W]` scale and shift fields (norm variant only).
    pub sigma: Option<Tensor>,
    pub mu: Option<Tensor>,
}

impl Sel {
    pub fn new(
        variant: SelVariant,
        resolution: usize,
        channels: usize,
        hm_channels: usize,
        dims: SelDims,
        rng: &mut impl RngCore,
    ) -> Sel {
        let extract = Conv2d::new(hm_channels, dims.inter_dim, KERNEL, lrelu_gain(), rng);
        let body = match variant {
            SelVariant::Norm => Body::Norm {
                sigma: Conv2d::new(dims.inter_dim, 1, KERNEL, 1.0, rng),
                mu: Conv2d::new(dims.inter_dim, 1, KERNEL, 1.0, rng),
            },
            SelVariant::Concat => Body::Concat {
                fuse: Conv2d::new(channels + dims.inter_dim, dims.concat_hidden, KERNEL, lrelu_gain(), rng),
                fuse_out: Conv2d::new(dims.concat_hidden, channels, KERNEL, 1.0, rng),
            },
        };
        Sel {
            resolution,
            channels,
            hm_channels,
            extract,
            body,
            post: Conv2d::zeros(channels, channels, KERNEL),
        }
    }

    pub fn variant(&self) -> SelVariant {
        match self.body {
            Body::Norm { .. } => SelVariant::Norm,
            Body::Concat { .. } => SelVariant::Concat,
        }
    }

    /// Scale/shift heads of the norm variant.
    pub fn heads(&self) -> Option<(&Conv2d, &Conv2d)> {
        match &self.body {
            Body::Norm { sigma, mu } => Some((sigma, mu)),
            Body::Concat { .. } => None,
        }
    }

    pub fn heads_mut(&mut self) -> Option<(&mut Conv2d, &mut Conv2d)> {
        match &mut self.body {
            Body::Norm { sigma, mu } => Some((sigma, mu)),
            Body::Concat { .. } => None,
        }
    }

    /// Fusion convs of the concat variant.
    pub fn fusion(&self) -> Option<(&Conv2d, &Conv2d)> {
        match &self.body {
            Body::Concat { fuse, fuse_out } => Some((fuse, fuse_out)),
            Body::Norm { .. } => None,
        }
    }

    pub fn forward(&self, feat: &Tensor, heat: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(feat, heat)?.output)
    }

    pub fn forward_traced(&self, feat: &Tensor, heat: &Tensor) -> Result<SelTrace> {
        let s = feat.shape();
        if s.len() != 4 || s[1] != self.channels || s[2] != self.resolution || s[3] != self.resolution {
            return Err(Error::Shape(format!(
                "SEL expects features [N, {c}, {r}, {r}], got {s:?}",
                c = self.channels,
                r = self.resolution
            )));
        }
        let h = heat.shape();
        if h.len() != 4 || h[0] != s[0] || h[1] != self.hm_channels {
            return Err(Error::Shape(format!(
                "SEL expects heatmaps [{}, {}, h, w], got {h:?}",
                s[0], self.hm_channels
            )));
        }
        let hm = resize_heatmaps(heat, self.resolution);
        let hm_feat = self.extract.forward(&hm).leaky_relu(LRELU_SLOPE);
        let mut trace = SelTrace { output: feat.clone(), normalized: None, sigma: None, mu: None };
        let dx = match &self.body {
            Body::Norm { sigma, mu } => {
                let normalized = instance_norm(feat, INSTANCE_NORM_EPS);
                let sg = sigma.forward(&hm_feat);
                let m = mu.forward(&hm_feat);
                let dx = &normalized * &sg.add_scalar(1.0) + &m;
                trace.normalized = Some(normalized);
                trace.sigma = Some(sg);
                trace.mu = Some(m);
                dx
            }
            Body::Concat { fuse, fuse_out } => {
                let joined = Tensor::concat(&[feat, &hm_feat], 1);
                fuse_out.forward(&fuse.forward(&joined).leaky_relu(LRELU_SLOPE))
            }
        };
        let residual = self.post.forward(&dx.leaky_relu(LRELU_SLOPE)).scale(RESIDUAL_SCALE);
        trace.output = feat + &residual;
        Ok(trace)
    }
}

impl Parameterized for Sel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_child("extract", &self.extract, f);
        match &self.body {
            Body::Norm { sigma, mu } => {
                visit_child("sigma", sigma, f);
                visit_child("mu", mu, f);
            }
            Body::Concat { fuse, fuse_out } => {
                visit_child("fuse", fuse, f);
                visit_child("fuse_out", fuse_out, f);
            }
        }
        visit_child("post", &self.post, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_child_mut("extract", &mut self.extract, f);
        match &mut self.body {
            Body::Norm { sigma, mu } => {
                visit_child_mut("sigma", sigma, f);
                visit_child_mut("mu", mu, f);
            }
            Body::Concat { fuse, fuse_out } => {
                visit_child_mut("fuse", fuse, f);
                visit_child_mut("fuse_out", fuse_out, f);
            }
        }
        visit_child_mut("post", &mut self.post, f);
    }
}

/// Per-sample, per-channel standardization over space, without affine
/// parameters: `(x - mean) / sqrt(var + eps)`.
pub fn instance_norm(x: &Tensor, eps: f64) -> Tensor {
    let centered = x - &x.mean_axes(&[2, 3], true);
    let var = centered.square().mean_axes(&[2, 3], true);
    &centered / &var.add_scalar(eps).sqrt()
}

/// Bilinear resize of the trailing two axes with corner alignment.
pub fn resize_bilinear_aligned(data: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let planes = data.len() / (h * w);
    let coord = |o: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out <= 1 || inp <= 1 {
            return (0, 0, 0.0);
        }
        let src = o as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let lo = (src.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, src - lo as f64)
    };
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &data[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1, fy) = coord(oy, oh, h);
            for ox in 0..ow {
                let (x0, x1, fx) = coord(ox, ow, w);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

/// Heatmaps are inputs, never trained: resizing happens on raw values.
fn resize_heatmaps(heat: &Tensor, res: usize) -> Tensor {
    let s = heat.shape();
    if s[2] == res && s[3] == res {
        return heat.detach();
    }
    let data = resize_bilinear_aligned(heat.data(), s[2], s[3], res, res);
    Tensor::from_vec(data, &[s[0], s[1], res, res]).expect("resize size")
}

/// Flatten ablation: append the vectorized level sums to the latent code,
/// `[z ; vec(sum_0) ; vec(sum_1) ; vec(sum_2)]`.
pub fn flatten_condition(z: &Tensor, level_maps: &[Tensor]) -> Result<Tensor> {
    if z.rank() != 2 {
        return Err(Error::Shape(format!("latent must be [N, L], got {:?}", z.shape())));
    }
    let n = z.dim(0);
    let mut parts = vec![z.clone()];
    for m in level_maps {
        if m.rank() != 4 || m.dim(0) != n {
            return Err(Error::Shape(format!("level maps must be [{n}, c, h, w], got {:?}", m.shape())));
        }
        let plane = m.dim(2) * m.dim(3);
        parts.push(m.detach().sum_axes(&[1], false).reshape(&[n, plane]));
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok(Tensor::concat(&refs, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fresh_layer_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for variant in [SelVariant::Norm, SelVariant::Concat] {
            let sel = Sel::new(variant, 4, 3, 2, SelDims { inter_dim: 8, concat_hidden: 16 }, &mut rng);
            let f = Tensor::from_vec((0..2 * 3 * 16).map(|i| (i as f64 * 0.37).sin()).collect(), &[2, 3, 4, 4]).unwrap();
            let h = Tensor::from_vec((0..2 * 2 * 16).map(|i| (i as f64 * 0.11).cos()).collect(), &[2, 2, 4, 4]).unwrap();
            let out = sel.forward(&f, &h).unwrap();
            assert_eq!(out.data(), f.data());
        }
    }

    #[test]
    fn wrong_feature_resolution_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sel = Sel::new(SelVariant::Norm, 8, 3, 1, SelDims::default(), &mut rng);
        let f = Tensor::zeros(&[1, 3, 4, 4]);
        let h = Tensor::zeros(&[1, 1, 8, 8]);
        assert!(matches!(sel.forward(&f, &h), Err(Error::Shape(_))));
    }

    #[test]
    fn bilinear_resize_keeps_corners_and_is_linear_between() {
        let data = vec![0.0, 1.0, 2.0, 3.0];
        let out = resize_bilinear_aligned(&data, 2, 2, 3, 3);
        assert_eq!(out, vec![0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn flatten_lengths() {
        let z = Tensor::zeros(&[2, 64]);
        let maps = [Tensor::zeros(&[2, 1, 4, 4]), Tensor::zeros(&[2, 2, 8, 8]), Tensor::zeros(&[2, 4, 16, 16])];
        let out = flatten_condition(&z, &maps).unwrap();
        assert_eq!(out.shape(), &[2, 400]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }
}
