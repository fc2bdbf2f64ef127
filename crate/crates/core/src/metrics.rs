//! Disequilibrium indicator, Fréchet distance and the training logbook.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use autograd::{no_grad, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, NamedTensor};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Parameterized, LRELU_SLOPE};

pub const DI_REPEATS: usize = 200;
pub const DI_PER_SIDE: usize = 64;
pub const COV_REGULARIZATION: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DIReport {
    pub repeats: usize,
    pub per_side: usize,
    pub min_real: Vec<f64>,
    pub max_fake: Vec<f64>,
    pub di_mean: f64,
    pub seed: u64,
}

/// Moves `k` uniformly chosen elements of `idx` to its front, without
/// replacement: for `i < k`, swap `idx[i]` with `idx[rng.gen_range(i..n)]`.
pub fn partial_shuffle(idx: &mut [usize], k: usize, rng: &mut impl Rng) {
    let n = idx.len();
    for i in 0..k.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
}

/// Mean over `repeats` of `min(real draw) - max(fake draw)`, each draw being
/// `per_side` scores taken without replacement from the pool. Every repeat
/// draws real first, then fake, each from a fresh identity index.
pub fn disequilibrium_indicator(
    real: &[f64],
    fake: &[f64],
    repeats: usize,
    per_side: usize,
    seed: u64,
) -> Result<DIReport> {
    for pool in [real, fake] {
        if pool.len() < per_side || per_side == 0 {
            return Err(Error::PoolTooSmall { have: pool.len(), need: per_side.max(1) });
        }
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("DI needs at least one repeat".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_real = Vec::with_capacity(repeats);
    let mut max_fake = Vec::with_capacity(repeats);
    let draw = |pool: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        partial_shuffle(&mut idx, per_side, rng);
        idx[..per_side].iter().map(|&i| pool[i]).collect()
    };
    for _ in 0..repeats {
        let r = draw(real, &mut rng);
        let f = draw(fake, &mut rng);
        min_real.push(r.iter().cloned().fold(f64::INFINITY, f64::min));
        max_fake.push(f.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    let di_mean = min_real.iter().zip(&max_fake).map(|(a, b)| a - b).sum::<f64>() / repeats as f64;
    Ok(DIReport { repeats, per_side, min_real, max_fake, di_mean, seed })
}

/// Gaussian fit of a feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`, unbiased.
    pub cov: Vec<f64>,
    pub count: usize,
    /// Set when there were too few samples and `1e-6 I` was added.
    pub regularized: bool,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Stats of `rows` feature vectors of length `dim` stored row-major.
    pub fn from_rows(data: &[f64], dim: usize) -> Result<FeatureStats> {
        if dim == 0 || !data.len().is_multiple_of(dim) || data.len() < 2 * dim {
            return Err(Error::InvalidArgument(format!(
                "need at least two feature rows of length {dim}, got {} values",
                data.len()
            )));
        }
        let n = data.len() / dim;
        let x = DMatrix::from_row_slice(n, dim, data);
        let mean: DVector<f64> = x.row_mean().transpose();
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let regularized = n < dim + 1;
        if regularized {
            for i in 0..dim {
                cov[(i, i)] += COV_REGULARIZATION;
            }
        }
        Ok(FeatureStats {
            mean: mean.iter().cloned().collect(),
            cov: cov.transpose().iter().cloned().collect(),
            count: n,
            regularized,
        })
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with the trace
/// of the product root taken as `Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2))`.
/// Negative eigenvalues from round-off are clipped to zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("feature dims {} vs {}", a.dim(), b.dim())));
    }
    let finite = |s: &FeatureStats| s.mean.iter().chain(&s.cov).all(|v| v.is_finite());
    if !finite(a) || !finite(b) {
        return Err(Error::InvalidArgument("non-finite feature statistics".into()));
    }
    let ca = a.cov_matrix();
    let cb = b.cov_matrix();
    let root_a = sym_sqrt(&ca);
    let inner = &root_a * &cb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d2: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((d2 + ca.trace() + cb.trace() - 2.0 * tr_cross).max(0.0))
}

/// Frozen random conv net used as the feature map for FID at this scale.
/// Three conv+pool stages, then average pooling to 2x2.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub convs: Vec<Conv2d>,
}

pub const EXTRACTOR_SEED: u64 = 0x5eed_f1d0;
pub const EXTRACTOR_WIDTH: usize = 16;

const SHIPPED_EXTRACTOR: &[u8] = include_bytes!("../assets/feature_extractor.ckpt");

impl FeatureExtractor {
    pub fn seeded(in_ch: usize, seed: u64) -> FeatureExtractor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prev = in_ch;
        let convs = (0..3)
            .map(|_| {
                let c = Conv2d::new(prev, EXTRACTOR_WIDTH, 3, crate::layers::lrelu_gain(), &mut rng).frozen();
                prev = EXTRACTOR_WIDTH;
                c
            })
            .collect();
        FeatureExtractor { convs }
    }

    /// The extractor every FID in this crate uses: three input channels,
    /// seeded with [`EXTRACTOR_SEED`], loaded from the checkpoint shipped in
    /// `assets/`.
    pub fn shipped() -> FeatureExtractor {
        FeatureExtractor::from_checkpoint(SHIPPED_EXTRACTOR, Path::new("assets/feature_extractor.ckpt"))
            .expect("shipped extractor checkpoint is valid")
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let tensors: Vec<NamedTensor> = self
            .named_params()
            .into_iter()
            .map(|(name, t)| NamedTensor { name, shape: t.shape().to_vec(), data: t.to_vec() })
            .collect();
        let meta = serde_json::json!({"kind": "feature_extractor", "convs": self.convs.len()});
        checkpoint::encode(&meta, &tensors)
    }

    pub fn from_checkpoint(bytes: &[u8], path: &Path) -> Result<FeatureExtractor> {
        let (meta, tensors) = checkpoint::decode(bytes, path)?;
        let bad = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
        let convs = meta["convs"].as_u64().ok_or_else(|| bad("missing conv count".into()))? as usize;
        let find = |name: String| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))
                .and_then(|t| Tensor::from_vec(t.data.clone(), &t.shape).map_err(|e| bad(e.to_string())))
        };
        let convs = (0..convs)
            .map(|i| Ok(Conv2d { weight: find(format!("conv{i}.weight"))?, bias: find(format!("conv{i}.bias"))? }))
            .collect::<Result<Vec<_>>>()?;
        if convs.is_empty() {
            return Err(bad("no layers".into()));
        }
        Ok(FeatureExtractor { convs })
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn feature_dim(&self) -> usize {
        EXTRACTOR_WIDTH * 4
    }

    /// `[N, C, r, r]` images to `[N, 64]` features.
    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        if images.rank() != 4 || images.dim(1) != self.in_channels() || images.dim(2) < 16 {
            return Err(Error::Shape(format!(
                "feature extractor expects [N, {}, r, r] with r >= 16, got {:?}",
                self.in_channels(),
                images.shape()
            )));
        }
        no_grad(|| {
            let mut h = images.detach();
            for c in &self.convs {
                h = c.forward(&h).leaky_relu(LRELU_SLOPE).avg_pool2x();
            }
            while h.dim(2) > 2 {
                h = h.avg_pool2x();
            }
            let n = h.dim(0);
            Ok(h.reshape(&[n, h.numel() / n]))
        })
    }

    pub fn stats(&self, images: &Tensor) -> Result<FeatureStats> {
        let f = self.features(images)?;
        FeatureStats::from_rows(f.data(), f.dim(1))
    }
}

impl Parameterized for FeatureExtractor {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, c) in self.convs.iter().enumerate() {
            crate::layers::visit_child(&format!("conv{i}"), c, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            crate::layers::visit_child_mut(&format!("conv{i}"), c, f);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub fid: f64,
    pub regularized: bool,
}

pub fn fid_between_sets(a: &Tensor, b: &Tensor, extractor: &FeatureExtractor) -> Result<FidReport> {
    let sa = extractor.stats(a)?;
    let sb = extractor.stats(b)?;
    Ok(FidReport {
        fid: frechet_distance(&sa, &sb)?,
        regularized: sa.regularized || sb.regularized,
    })
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub l_align: f64,
    pub min_real: f64,
    pub max_fake: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub di_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    pub config_hash: String,
}

/// Append-only line-delimited JSON log.
pub struct Logbook {
    out: BufWriter<File>,
}

impl Logbook {
    pub fn create(path: &Path) -> Result<Logbook> {
        Ok(Logbook { out: BufWriter::new(File::create(path)?) })
    }

    pub fn append_to(path: &Path) -> Result<Logbook> {
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Logbook { out: BufWriter::new(f) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_log<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurves {
    pub steps: Vec<u64>,
    pub min_real: Vec<f64>,
    pub max_fake: Vec<f64>,
}

pub fn score_curves(log: &[MetricsRecord]) -> ScoreCurves {
    ScoreCurves {
        steps: log.iter().map(|r| r.step).collect(),
        min_real: log.iter().map(|r| r.min_real).collect(),
        max_fake: log.iter().map(|r| r.max_fake).collect(),
    }
}

/// Line plot of the two score series as a standalone SVG document.
pub fn curves_svg(curves: &ScoreCurves, width: u32, height: u32) -> String {
    let (w, h) = (width as f64, height as f64);
    let margin = 40.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if !curves.steps.is_empty() {
        let x_min = *curves.steps.first().unwrap() as f64;
        let x_max = (*curves.steps.last().unwrap() as f64).max(x_min + 1.0);
        let all = curves.min_real.iter().chain(&curves.max_fake).filter(|v| v.is_finite());
        let (mut y_min, mut y_max) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if y_max <= y_min {
            y_min -= 1.0;
            y_max += 1.0;
        }
        let px = |s: u64| margin + (s as f64 - x_min) / (x_max - x_min) * (w - 2.0 * margin);
        let py = |v: f64| h - margin - (v - y_min) / (y_max - y_min) * (h - 2.0 * margin);
        for (series, color, label) in [(&curves.min_real, "#1f77b4", "min real"), (&curves.max_fake, "#d62728", "max fake")] {
            let pts: Vec<String> = curves
                .steps
                .iter()
                .zip(series.iter())
                .map(|(&s, &v)| format!("{:.2},{:.2}", px(s), py(v)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let ly = if label == "min real" { margin - 20.0 } else { margin - 6.0 };
            let _ = writeln!(svg, r#"<text x="{margin}" y="{ly}" font-size="11" fill="{color}">{label}</text>"#);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{margin}" y="{:.0}" font-size="10">step {x_min:.0} to {x_max:.0}, score {y_min:.3} to {y_max:.3}</text>"#,
            h - 10.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
