//! Hierarchical spatial heatmaps.
//!
//! A pyramid has three levels rendered at 4x4, 8x8 and 16x16. Level 0 holds
//! one Gaussian bump whose center is drawn around the middle of the frame;
//! levels 1 and 2 hold two and four bumps whose centers are offsets from the
//! level-0 center, so moving that center drags the finer levels along.
//!
//! Coordinates come in two frames. Pixel coordinates live in `[0, res)` of
//! the training image; normalized coordinates map pixel `v` to
//! `2 v / (res - 1) - 1`. Grid cell `i` of a level map sits at normalized
//! position `2 i / (r - 1) - 1`, so maps at different resolutions line up
//! geometrically.

use std::f64::consts::SQRT_2;

use autograd::Tensor;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid side of each level's feature map.
pub const LEVEL_RESOLUTIONS: [usize; 3] = [4, 8, 16];

/// Number of sub-heatmaps per level.
pub const DEFAULT_COUNTS: [usize; 3] = [1, 2, 4];

/// Level-0 variance in normalized units squared.
pub const DEFAULT_VAR0: f64 = 0.5;

pub const MAX_LEVEL0_TRIES: usize = 100;

/// Anything that yields standard normal draws. Implemented for every RNG;
/// tests substitute scripted sequences.
pub trait NormalSource {
    fn standard_normal(&mut self) -> f64;
}

impl<R: RngCore> NormalSource for R {
    fn standard_normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Pixel { res: usize },
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coord2D {
    pub y: f64,
    pub x: f64,
    pub frame: Frame,
}

impl Coord2D {
    pub fn normalized(y: f64, x: f64) -> Coord2D {
        Coord2D { y, x, frame: Frame::Normalized }
    }

    pub fn pixel(y: f64, x: f64, res: usize) -> Coord2D {
        Coord2D { y, x, frame: Frame::Pixel { res } }
    }

    pub fn to_normalized(self) -> Coord2D {
        match self.frame {
            Frame::Normalized => self,
            Frame::Pixel { res } => Coord2D::normalized(pixel_to_norm(self.y, res), pixel_to_norm(self.x, res)),
        }
    }

    pub fn to_pixel(self, res: usize) -> Coord2D {
        let n = self.to_normalized();
        Coord2D::pixel(norm_to_pixel(n.y, res), norm_to_pixel(n.x, res), res)
    }

    /// Whether the coordinate satisfies the acceptance rule of its frame.
    pub fn in_frame(&self) -> bool {
        match self.frame {
            Frame::Normalized => self.y.abs() <= 1.0 && self.x.abs() <= 1.0,
            Frame::Pixel { res } => {
                let r = res as f64;
                (0.0..r).contains(&self.y) && (0.0..r).contains(&self.x)
            }
        }
    }

    pub fn offset(self, dy: f64, dx: f64) -> Coord2D {
        Coord2D { y: self.y + dy, x: self.x + dx, frame: self.frame }
    }
}

pub fn pixel_to_norm(v: f64, res: usize) -> f64 {
    2.0 * v / (res as f64 - 1.0) - 1.0
}

pub fn norm_to_pixel(v: f64, res: usize) -> f64 {
    (v + 1.0) * (res as f64 - 1.0) / 2.0
}

/// Normalized position of grid cell `i` on a `res`-wide grid.
pub fn grid_coord(i: usize, res: usize) -> f64 {
    2.0 * i as f64 / (res as f64 - 1.0) - 1.0
}

/// A level-0 draw that fell outside the frame, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rejected {
    pub y: f64,
    pub x: f64,
}

/// One level-0 center draw: per axis `N(res/2, (res/3)^2)` in pixels,
/// rejected unless both axes land in `[0, res)`. Accepted centers are
/// returned in normalized coordinates.
pub fn sample_level0_center(res: usize, src: &mut impl NormalSource) -> std::result::Result<Coord2D, Rejected> {
    let mean = res as f64 / 2.0;
    let std = res as f64 / 3.0;
    let y = mean + std * src.standard_normal();
    let x = mean + std * src.standard_normal();
    let c = Coord2D::pixel(y, x, res);
    if c.in_frame() {
        Ok(c.to_normalized())
    } else {
        Err(Rejected { y, x })
    }
}

/// Redraws rejected level-0 centers, giving up after `max_tries`.
pub fn sample_level0_center_bounded(res: usize, src: &mut impl NormalSource, max_tries: usize) -> Result<Coord2D> {
    for _ in 0..max_tries {
        if let Ok(c) = sample_level0_center(res, src) {
            return Ok(c);
        }
    }
    Err(Error::SamplingExhausted { tries: max_tries })
}

/// `exp(-|g - center|^2 / variance)` over a `res x res` grid in normalized
/// units, row-major. No normalizing constant, so the range is `(0, 1]`.
pub fn gaussian_bump(res: usize, center: Coord2D, variance: f64) -> Result<Vec<f64>> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::InvalidArgument(format!("bump variance must be positive, got {variance}")));
    }
    if res < 2 {
        return Err(Error::InvalidArgument(format!("bump grid needs res >= 2, got {res}")));
    }
    let c = center.to_normalized();
    let mut out = Vec::with_capacity(res * res);
    for i in 0..res {
        let dy = grid_coord(i, res) - c.y;
        for j in 0..res {
            let dx = grid_coord(j, res) - c.x;
            out.push((-(dy * dy + dx * dx) / variance).exp());
        }
    }
    Ok(out)
}

/// Per-level variance: `var0`, then divided by sqrt(2) at each finer level.
pub fn level_variances(var0: f64) -> [f64; 3] {
    let v1 = var0 / SQRT_2;
    let v2 = v1 / SQRT_2;
    [var0, v1, v2]
}

/// Sampling hyperparameters of a pyramid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub var0: f64,
    pub counts: [usize; 3],
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec { var0: DEFAULT_VAR0, counts: DEFAULT_COUNTS }
    }
}

impl HeatmapSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.var0 > 0.0 && self.var0.is_finite()) {
            return Err(Error::InvalidArgument(format!("var0 must be positive, got {}", self.var0)));
        }
        if self.counts[0] != 1 {
            return Err(Error::InvalidArgument(format!("level 0 has exactly one center, got {}", self.counts[0])));
        }
        if self.counts.contains(&0) {
            return Err(Error::InvalidArgument("every level needs at least one center".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapLevel {
    pub level: usize,
    pub resolution: usize,
    /// Normalized coordinates.
    pub centers: Vec<Coord2D>,
    pub variance: f64,
    /// `[n, resolution, resolution]`, one sub-heatmap per center.
    pub maps: Vec<f64>,
}

impl HeatmapLevel {
    pub fn render(level: usize, resolution: usize, centers: Vec<Coord2D>, variance: f64) -> Result<HeatmapLevel> {
        let centers: Vec<Coord2D> = centers.into_iter().map(Coord2D::to_normalized).collect();
        let mut maps = Vec::with_capacity(centers.len() * resolution * resolution);
        for c in &centers {
            maps.extend(gaussian_bump(resolution, *c, variance)?);
        }
        Ok(HeatmapLevel { level, resolution, centers, variance, maps })
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn map(&self, i: usize) -> &[f64] {
        let plane = self.resolution * self.resolution;
        &self.maps[i * plane..(i + 1) * plane]
    }
}

/// Elementwise sum of a level's sub-heatmaps.
pub fn level_sum(level: &HeatmapLevel) -> Vec<f64> {
    let plane = level.resolution * level.resolution;
    let mut out = vec![0.0; plane];
    for i in 0..level.count() {
        for (o, v) in out.iter_mut().zip(level.map(i)) {
            *o += v;
        }
    }
    out
}

/// Per-axis child offsets in normalized units: pixel std `res / 6`.
pub fn sample_child_offsets(res: usize, count: usize, src: &mut impl NormalSource) -> Vec<(f64, f64)> {
    let std_px = res as f64 / 6.0;
    let to_norm = 2.0 / (res as f64 - 1.0);
    (0..count)
        .map(|_| {
            let dy = std_px * src.standard_normal() * to_norm;
            let dx = std_px * src.standard_normal() * to_norm;
            (dy, dx)
        })
        .collect()
}

/// Children are never rejection-tested; only the anchor is.
pub fn place_children(anchor: Coord2D, offsets: &[(f64, f64)]) -> Vec<Coord2D> {
    let a = anchor.to_normalized();
    offsets.iter().map(|&(dy, dx)| a.offset(dy, dx)).collect()
}

/// Centers for all three levels, children anchored on the level-0 center.
pub fn sample_hierarchical_centers(
    base_res: usize,
    counts: [usize; 3],
    src: &mut impl NormalSource,
) -> Result<Vec<Vec<Coord2D>>> {
    let c0 = sample_level0_center_bounded(base_res, src, MAX_LEVEL0_TRIES)?;
    let l1 = place_children(c0, &sample_child_offsets(base_res, counts[1], src));
    let l2 = place_children(c0, &sample_child_offsets(base_res, counts[2], src));
    Ok(vec![vec![c0], l1, l2])
}

/// Ablation: every level gets its own independently drawn anchor.
pub fn sample_independent_centers(
    base_res: usize,
    counts: [usize; 3],
    src: &mut impl NormalSource,
) -> Result<Vec<Vec<Coord2D>>> {
    let mut levels = Vec::with_capacity(3);
    levels.push(vec![sample_level0_center_bounded(base_res, src, MAX_LEVEL0_TRIES)?]);
    for &count in &counts[1..] {
        let anchor = sample_level0_center_bounded(base_res, src, MAX_LEVEL0_TRIES)?;
        levels.push(place_children(anchor, &sample_child_offsets(base_res, count, src)));
    }
    Ok(levels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapPyramid {
    pub levels: Vec<HeatmapLevel>,
    pub base_res: usize,
    pub var0: f64,
    /// Seed the centers were drawn with, when drawn from a seed.
    pub seed: Option<u64>,
}

impl HeatmapPyramid {
    /// Renders a pyramid from explicit per-level centers (no resampling).
    pub fn from_centers(base_res: usize, var0: f64, centers: Vec<Vec<Coord2D>>) -> Result<HeatmapPyramid> {
        if centers.len() != LEVEL_RESOLUTIONS.len() {
            return Err(Error::InvalidArgument(format!("expected 3 levels of centers, got {}", centers.len())));
        }
        let spec = HeatmapSpec {
            var0,
            counts: [centers[0].len(), centers[1].len(), centers[2].len()],
        };
        spec.validate()?;
        let variances = level_variances(var0);
        let levels = centers
            .into_iter()
            .enumerate()
            .map(|(l, cs)| HeatmapLevel::render(l, LEVEL_RESOLUTIONS[l], cs, variances[l]))
            .collect::<Result<Vec<_>>>()?;
        Ok(HeatmapPyramid { levels, base_res, var0, seed: None })
    }

    pub fn sample(base_res: usize, spec: &HeatmapSpec, src: &mut impl NormalSource) -> Result<HeatmapPyramid> {
        spec.validate()?;
        let centers = sample_hierarchical_centers(base_res, spec.counts, src)?;
        HeatmapPyramid::from_centers(base_res, spec.var0, centers)
    }

    pub fn sample_seeded(base_res: usize, spec: &HeatmapSpec, seed: u64) -> Result<HeatmapPyramid> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = HeatmapPyramid::sample(base_res, spec, &mut rng)?;
        p.seed = Some(seed);
        Ok(p)
    }

    pub fn level0_center(&self) -> Coord2D {
        self.levels[0].centers[0]
    }

    pub fn centers(&self) -> Vec<Vec<Coord2D>> {
        self.levels.iter().map(|l| l.centers.clone()).collect()
    }

    /// Same pyramid with every center (all levels) shifted by a normalized
    /// offset.
    pub fn shifted(&self, dy: f64, dx: f64) -> Result<HeatmapPyramid> {
        let centers = self
            .levels
            .iter()
            .map(|l| l.centers.iter().map(|c| c.offset(dy, dx)).collect())
            .collect();
        HeatmapPyramid::from_centers(self.base_res, self.var0, centers)
    }

    pub fn to_record(&self) -> PyramidRecord {
        PyramidRecord {
            seed: self.seed,
            base_res: self.base_res,
            var0: self.var0,
            centers: self
                .levels
                .iter()
                .map(|l| l.centers.iter().map(|c| [c.y, c.x]).collect())
                .collect(),
        }
    }

    pub fn from_record(rec: &PyramidRecord) -> Result<HeatmapPyramid> {
        let centers = rec
            .centers
            .iter()
            .map(|l| l.iter().map(|&[y, x]| Coord2D::normalized(y, x)).collect())
            .collect();
        let mut p = HeatmapPyramid::from_centers(rec.base_res, rec.var0, centers)?;
        p.seed = rec.seed;
        Ok(p)
    }
}

/// Serializable description of a pyramid; enough to re-render it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidRecord {
    pub seed: Option<u64>,
    pub base_res: usize,
    pub var0: f64,
    /// Per level, `[y, x]` in normalized coordinates.
    pub centers: Vec<Vec<[f64; 2]>>,
}

/// Where the generator's spatial input comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMode {
    Hierarchical,
    NonHierarchical,
    /// Unstructured `N(0, 1)` maps of the same shapes.
    GaussianNoise,
}

/// A batch of spatial inputs ready for the generator.
#[derive(Clone, Debug)]
pub struct SpatialBatch {
    /// Per level, `[N, n_level, r, r]`.
    pub maps: Vec<Tensor>,
    /// Per level, `[N, r, r]`: sub-heatmap sums clipped to `[0, 1]`.
    pub targets: Vec<Tensor>,
    /// Level-0 centers, when the maps were drawn from bumps.
    pub centers: Vec<Option<Coord2D>>,
}

impl SpatialBatch {
    pub fn from_pyramids(pyramids: &[HeatmapPyramid]) -> Result<SpatialBatch> {
        let first = pyramids
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty pyramid batch".into()))?;
        let mut maps = Vec::with_capacity(3);
        let mut targets = Vec::with_capacity(3);
        for (l, lvl0) in first.levels.iter().enumerate() {
            let (n, r) = (lvl0.count(), lvl0.resolution);
            let mut m = Vec::with_capacity(pyramids.len() * n * r * r);
            let mut t = Vec::with_capacity(pyramids.len() * r * r);
            for p in pyramids {
                let lvl = &p.levels[l];
                if lvl.count() != n || lvl.resolution != r {
                    return Err(Error::Shape(format!("level {l} differs across the batch")));
                }
                m.extend_from_slice(&lvl.maps);
                t.extend(level_sum(lvl).into_iter().map(|v| v.clamp(0.0, 1.0)));
            }
            maps.push(Tensor::from_vec(m, &[pyramids.len(), n, r, r]).expect("sizes computed above"));
            targets.push(Tensor::from_vec(t, &[pyramids.len(), r, r]).expect("sizes computed above"));
        }
        Ok(SpatialBatch {
            maps,
            targets,
            centers: pyramids.iter().map(|p| Some(p.level0_center())).collect(),
        })
    }

    pub fn gaussian_noise(batch: usize, counts: [usize; 3], rng: &mut impl NormalSource) -> SpatialBatch {
        let mut maps = Vec::with_capacity(3);
        let mut targets = Vec::with_capacity(3);
        for (l, &n) in counts.iter().enumerate() {
            let r = LEVEL_RESOLUTIONS[l];
            let data: Vec<f64> = (0..batch * n * r * r).map(|_| rng.standard_normal()).collect();
            let m = Tensor::from_vec(data, &[batch, n, r, r]).expect("sizes computed above");
            targets.push(autograd::no_grad(|| m.sum_axes(&[1], false).clamp(0.0, 1.0)));
            maps.push(m);
        }
        SpatialBatch { maps, targets, centers: vec![None; batch] }
    }

    /// Draws a batch according to `mode`.
    pub fn draw<R: RngCore>(
        mode: HeatmapMode,
        batch: usize,
        base_res: usize,
        spec: &HeatmapSpec,
        rng: &mut R,
    ) -> Result<SpatialBatch> {
        spec.validate()?;
        match mode {
            HeatmapMode::GaussianNoise => Ok(SpatialBatch::gaussian_noise(batch, spec.counts, rng)),
            HeatmapMode::Hierarchical | HeatmapMode::NonHierarchical => {
                let pyramids = (0..batch)
                    .map(|_| {
                        let centers = if mode == HeatmapMode::Hierarchical {
                            sample_hierarchical_centers(base_res, spec.counts, rng)?
                        } else {
                            sample_independent_centers(base_res, spec.counts, rng)?
                        };
                        HeatmapPyramid::from_centers(base_res, spec.var0, centers)
                    })
                    .collect::<Result<Vec<_>>>()?;
                SpatialBatch::from_pyramids(&pyramids)
            }
        }
    }

    /// The batch items at `idx`, in that order (repeats allowed).
    pub fn select(&self, idx: &[usize]) -> SpatialBatch {
        let pick = |t: &Tensor| {
            let per = t.numel() / t.dim(0);
            let mut data = Vec::with_capacity(idx.len() * per);
            for &i in idx {
                data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = idx.len();
            Tensor::from_vec(data, &shape).expect("sizes computed above")
        };
        SpatialBatch {
            maps: self.maps.iter().map(pick).collect(),
            targets: self.targets.iter().map(pick).collect(),
            centers: idx.iter().map(|&i| self.centers[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}
