//! Training data: the synthetic blob dataset and image folders.

use std::path::Path;

use autograd::Tensor;
use image::imageops::FilterType;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::NormalSource;

/// One bright Gaussian blob on a flat background, centered uniformly at
/// random inside a margin. The default background is 0 (mid gray): a
/// background at -1 gives the critic's early layers strong constant
/// activations everywhere except the blob, and its attention then settles
/// on the background instead of the blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub res: usize,
    /// Blob standard deviation in pixels.
    pub blob_std: f64,
    /// Centers are uniform in `[margin, res - 1 - margin]` per axis.
    pub margin: f64,
    /// Peak brightness above the background, in `[0, 1]`.
    pub intensity: f64,
    /// Std of additive Gaussian pixel noise, in image units.
    pub noise_std: f64,
    /// Background level in `[-1, 1)`.
    #[serde(default = "default_background")]
    pub background: f64,
}

fn default_background() -> f64 {
    0.0
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec { res: 32, blob_std: 3.0, margin: 6.0, intensity: 1.0, noise_std: 0.0, background: 0.0 }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        let span = self.res as f64 - 1.0 - 2.0 * self.margin;
        if self.res < 4 || span < 0.0 || !(self.blob_std > 0.0) || !(0.0..=1.0).contains(&self.intensity) || self.noise_std < 0.0
            || !(-1.0..1.0).contains(&self.background)
        {
            return Err(Error::InvalidArgument(format!("invalid blob spec {self:?}")));
        }
        Ok(())
    }

    pub fn center_range(&self) -> (f64, f64) {
        (self.margin, self.res as f64 - 1.0 - self.margin)
    }
}

/// Renders a blob at pixel `center = (y, x)`. Values are
/// `b + (1 - b) * intensity * exp(-d^2 / (2 std^2))` for background `b`,
/// plus noise, clipped to `[-1, 1]`.
pub fn render_blob(spec: &BlobSpec, center: (f64, f64), rng: &mut impl NormalSource) -> Result<Vec<f64>> {
    spec.validate()?;
    let (lo, hi) = spec.center_range();
    if !(lo..=hi).contains(&center.0) || !(lo..=hi).contains(&center.1) {
        return Err(Error::InvalidArgument(format!(
            "blob center {center:?} outside [{lo}, {hi}]"
        )));
    }
    let r = spec.res;
    let two_var = 2.0 * spec.blob_std * spec.blob_std;
    let mut img = Vec::with_capacity(r * r);
    for y in 0..r {
        for x in 0..r {
            let d2 = (y as f64 - center.0).powi(2) + (x as f64 - center.1).powi(2);
            let mut v = spec.background + (1.0 - spec.background) * spec.intensity * (-d2 / two_var).exp();
            if spec.noise_std > 0.0 {
                v += spec.noise_std * rng.standard_normal();
            }
            img.push(v.clamp(-1.0, 1.0));
        }
    }
    Ok(img)
}

/// Intensity-weighted centroid `(y, x)` in pixels, taking each pixel's
/// value above the image minimum as its mass. `None` for a flat image.
pub fn center_of_mass(img: &[f64], res: usize) -> Option<(f64, f64)> {
    let floor = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut m, mut my, mut mx) = (0.0, 0.0, 0.0);
    for (i, &v) in img.iter().enumerate() {
        let w = v - floor;
        m += w;
        my += w * (i / res) as f64;
        mx += w * (i % res) as f64;
    }
    (m > 0.0).then(|| (my / m, mx / m))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlobDataset {
    pub spec: BlobSpec,
}

impl BlobDataset {
    pub fn new(spec: BlobSpec) -> Result<BlobDataset> {
        spec.validate()?;
        Ok(BlobDataset { spec })
    }

    pub fn sample_center(&self, rng: &mut impl Rng) -> (f64, f64) {
        let (lo, hi) = self.spec.center_range();
        (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let c = self.sample_center(rng);
        render_blob(&self.spec, c, rng).expect("center drawn inside the margins")
    }
}

/// Decoded, resized images held in memory.
#[derive(Clone, Debug)]
pub struct ImageFolder {
    pub res: usize,
    pub channels: usize,
    /// Each `channels x res x res`, values in `[-1, 1]`.
    pub images: Vec<Vec<f64>>,
    /// Files that could not be read or decoded.
    pub skipped: usize,
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Reads one PNG/JPEG as RGB `3 x res x res` in `[-1, 1]`: center-cropped
/// to a square, then resized.
pub fn load_image(path: &Path, res: usize) -> Result<Vec<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(&img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    let resized = image::imageops::resize(&cropped, res as u32, res as u32, FilterType::Triangle);
    let mut chw = vec![0.0; 3 * res * res];
    for (x, y, px) in resized.enumerate_pixels() {
        for c in 0..3 {
            chw[c * res * res + y as usize * res + x as usize] = px[c] as f64 / 127.5 - 1.0;
        }
    }
    Ok(chw)
}

/// Loads every PNG/JPEG under `dir` (sorted by file name), center-crops to a
/// square, resizes to `res` and maps pixels to `[-1, 1]`. With `flips`, each
/// image is followed by its horizontal mirror.
pub fn load_image_folder(dir: &Path, res: usize, flips: bool) -> Result<ImageFolder> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort();
    let mut images = Vec::new();
    let mut skipped = 0;
    for p in &paths {
        let chw = match load_image(p, res) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped += 1;
                continue;
            }
        };
        if flips {
            let mirrored = mirror(&chw, 3, res);
            images.push(chw);
            images.push(mirrored);
        } else {
            images.push(chw);
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} unreadable files skipped in {}", dir.display());
    }
    Ok(ImageFolder { res, channels: 3, images, skipped })
}

/// Horizontal mirror of a `channels x res x res` image.
pub fn mirror(img: &[f64], channels: usize, res: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        for y in 0..res {
            for x in 0..res {
                let base = c * res * res + y * res;
                out[base + x] = img[base + res - 1 - x];
            }
        }
    }
    out
}

/// Where real training images come from.
#[derive(Clone, Debug)]
pub enum DataSource {
    Blobs(BlobDataset),
    Folder(ImageFolder),
}

impl DataSource {
    pub fn channels(&self) -> usize {
        match self {
            DataSource::Blobs(_) => 1,
            DataSource::Folder(f) => f.channels,
        }
    }

    pub fn res(&self) -> usize {
        match self {
            DataSource::Blobs(b) => b.spec.res,
            DataSource::Folder(f) => f.res,
        }
    }

    /// `[n, C, res, res]` batch drawn with `rng` (blobs are rendered fresh;
    /// folder images are picked uniformly with replacement).
    pub fn batch(&self, n: usize, rng: &mut impl Rng) -> Result<Tensor> {
        let (c, r) = (self.channels(), self.res());
        let mut data = Vec::with_capacity(n * c * r * r);
        match self {
            DataSource::Blobs(b) => {
                for _ in 0..n {
                    data.extend(b.sample(rng));
                }
            }
            DataSource::Folder(f) => {
                if f.images.is_empty() {
                    return Err(Error::InvalidArgument("image folder holds no readable images".into()));
                }
                for _ in 0..n {
                    data.extend_from_slice(&f.images[rng.gen_range(0..f.images.len())]);
                }
            }
        }
        Ok(Tensor::from_vec(data, &[n, c, r, r]).expect("sizes computed above"))
    }
}
