//! Convolution and dense layers plus the parameter-walking trait shared by
//! every network in the crate.

use autograd::{Conv2dGeom, Tensor};
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::heatmap::NormalSource;

pub const LRELU_SLOPE: f64 = 0.2;

/// He-style gain for leaky-ReLU layers.
pub fn lrelu_gain() -> f64 {
    (2.0 / (1.0 + LRELU_SLOPE * LRELU_SLOPE)).sqrt()
}

fn scaled_normal(n: usize, scale: f64, rng: &mut impl RngCore) -> Vec<f64> {
    (0..n).map(|_| scale * rng.standard_normal()).collect()
}

/// Square-kernel convolution with bias, stride 1 and same padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    /// Weights drawn from `N(0, gain^2 / fan_in)`, bias zero.
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, gain: f64, rng: &mut impl RngCore) -> Conv2d {
        let fan_in = in_ch * kernel * kernel;
        let w = scaled_normal(out_ch * fan_in, gain / (fan_in as f64).sqrt(), rng);
        Conv2d {
            weight: Tensor::param(w, &[out_ch, in_ch, kernel, kernel]).expect("weight size"),
            bias: Tensor::param(vec![0.0; out_ch], &[out_ch]).expect("bias size"),
        }
    }

    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Conv2d {
        Conv2d {
            weight: Tensor::param(vec![0.0; out_ch * in_ch * kernel * kernel], &[out_ch, in_ch, kernel, kernel])
                .expect("weight size"),
            bias: Tensor::param(vec![0.0; out_ch], &[out_ch]).expect("bias size"),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let k = self.kernel();
        let geom = Conv2dGeom { stride: 1, pad: k / 2 };
        let o = self.out_channels();
        x.conv2d(&self.weight, geom) + self.bias.reshape(&[1, o, 1, 1])
    }
}

/// `y = x W + b` on `[N, in]` inputs.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(inp: usize, out: usize, gain: f64, rng: &mut impl RngCore) -> Dense {
        let w = scaled_normal(inp * out, gain / (inp as f64).sqrt(), rng);
        Dense {
            weight: Tensor::param(w, &[inp, out]).expect("weight size"),
            bias: Tensor::param(vec![0.0; out], &[out]).expect("bias size"),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.matmul(&self.weight) + &self.bias
    }
}

/// Deterministic, ordered access to a network's parameters.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// SHA-256 over names, shapes and the exact bits of every value.
    fn params_hash(&self) -> String {
        let mut h = Sha256::new();
        self.visit(&mut |name, t| {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        });
        hex::encode(h.finalize())
    }

    /// A copy whose parameters are constants: nothing computed through it
    /// can send gradient back into the originals.
    fn frozen(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut c = self.clone();
        c.visit_mut(&mut |_, t| *t = t.detach());
        c
    }
}

impl Parameterized for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

impl Parameterized for Dense {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// Visits a child module under `prefix.`.
pub(crate) fn visit_child(
    prefix: &str,
    child: &dyn Parameterized,
    f: &mut dyn FnMut(&str, &Tensor),
) {
    child.visit(&mut |n, t| f(&format!("{prefix}.{n}"), t));
}

pub(crate) fn visit_child_mut<P: Parameterized + ?Sized>(
    prefix: &str,
    child: &mut P,
    f: &mut dyn FnMut(&str, &mut Tensor),
) {
    child.visit_mut(&mut |n, t| f(&format!("{prefix}.{n}"), t));
}

/// Replaces every parameter of `model` with the tensor named
/// `prefix + name` in `source`. All names must be present with matching
/// shapes.
pub fn assign_params(
    model: &mut dyn Parameterized,
    prefix: &str,
    source: &std::collections::HashMap<String, (Vec<usize>, Vec<f64>)>,
) -> std::result::Result<(), String> {
    let mut err = None;
    model.visit_mut(&mut |name, t| {
        if err.is_some() {
            return;
        }
        let key = format!("{prefix}{name}");
        match source.get(&key) {
            Some((shape, data)) if shape.as_slice() == t.shape() => {
                *t = Tensor::param(data.clone(), shape).expect("shape checked");
            }
            Some((shape, _)) => err = Some(format!("{key}: shape {shape:?}, expected {:?}", t.shape())),
            None => err = Some(format!("missing tensor {key}")),
        }
    });
    err.map_or(Ok(()), Err)
}
