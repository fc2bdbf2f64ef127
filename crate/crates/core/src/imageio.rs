//! PNG encoding for sample grids, heatmaps and attention overlays.
//!
//! Encoding is deterministic: identical pixels and text chunks give
//! identical bytes.

use std::path::Path;

use autograd::Tensor;

use crate::error::{Error, Result};
use crate::sel::resize_bilinear_aligned;

/// 8-bit raster, either gray (1 channel) or RGB (3), row-major interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

/// Maps `[-1, 1]` to `0..=255`.
pub fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Maps `[0, 1]` to `0..=255`.
pub fn unit_to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

impl Raster {
    pub fn encode_png(&self, text: &[(&str, &str)]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(match self.channels {
                1 => png::ColorType::Grayscale,
                3 => png::ColorType::Rgb,
                c => return Err(Error::Image(format!("cannot encode {c}-channel raster"))),
            });
            enc.set_depth(png::BitDepth::Eight);
            for (k, v) in text {
                enc.add_text_chunk(k.to_string(), v.to_string())
                    .map_err(|e| Error::Image(e.to_string()))?;
            }
            let mut w = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
            w.write_image_data(&self.pixels).map_err(|e| Error::Image(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn save_png(&self, path: &Path, text: &[(&str, &str)]) -> Result<()> {
        std::fs::write(path, self.encode_png(text)?)?;
        Ok(())
    }
}

/// One image `[C, r, r]` (values in `[-1, 1]`) as a raster.
pub fn image_raster(data: &[f64], channels: usize, res: usize) -> Result<Raster> {
    if data.len() != channels * res * res || !(channels == 1 || channels == 3) {
        return Err(Error::Image(format!("{} values for a {channels}x{res}x{res} image", data.len())));
    }
    let plane = res * res;
    let mut pixels = Vec::with_capacity(data.len());
    for i in 0..plane {
        for c in 0..channels {
            pixels.push(to_u8(data[c * plane + i]));
        }
    }
    Ok(Raster { width: res, height: res, channels, pixels })
}

/// Tiles `rows * cols` images `[N, C, r, r]` row by row, `pad` pixels apart.
pub fn grid_raster(images: &Tensor, rows: usize, cols: usize, pad: usize) -> Result<Raster> {
    let s = images.shape();
    if s.len() != 4 || s[0] != rows * cols || s[2] != s[3] {
        return Err(Error::Image(format!("{:?} does not hold a {rows}x{cols} grid", s)));
    }
    let (c, r) = (s[1], s[2]);
    let width = cols * r + (cols + 1) * pad;
    let height = rows * r + (rows + 1) * pad;
    let mut pixels = vec![255u8; width * height * c];
    let per = c * r * r;
    for i in 0..rows * cols {
        let tile = image_raster(&images.data()[i * per..(i + 1) * per], c, r)?;
        let (oy, ox) = (pad + (i / cols) * (r + pad), pad + (i % cols) * (r + pad));
        for y in 0..r {
            let dst = ((oy + y) * width + ox) * c;
            pixels[dst..dst + r * c].copy_from_slice(&tile.pixels[y * r * c..(y + 1) * r * c]);
        }
    }
    Ok(Raster { width, height, channels: c, pixels })
}

/// A `[0, 1]` map of side `res`, nearest-neighbour enlarged by `scale`.
pub fn map_raster(values: &[f64], res: usize, scale: usize) -> Raster {
    let side = res * scale;
    let mut pixels = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            pixels.push(unit_to_u8(values[(y / scale) * res + x / scale]));
        }
    }
    Raster { width: side, height: side, channels: 1, pixels }
}

/// Red attention overlay on an image: the map (max-normalized, side `h`) is
/// resized bilinearly to the image and blended as
/// `(1 - alpha * m) * image + alpha * m * red`.
pub fn overlay_raster(image: &[f64], channels: usize, res: usize, map: &[f64], map_res: usize, alpha: f64) -> Result<Raster> {
    let base = image_raster(image, channels, res)?;
    let up = resize_bilinear_aligned(map, map_res, map_res, res, res);
    let mut pixels = Vec::with_capacity(res * res * 3);
    for (i, &m) in up.iter().enumerate() {
        let a = (alpha * m).clamp(0.0, 1.0);
        let rgb = if channels == 1 {
            [base.pixels[i]; 3]
        } else {
            [base.pixels[3 * i], base.pixels[3 * i + 1], base.pixels[3 * i + 2]]
        };
        let red = [255.0, 0.0, 0.0];
        for c in 0..3 {
            pixels.push(((1.0 - a) * rgb[c] as f64 + a * red[c]).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(Raster { width: res, height: res, channels: 3, pixels })
}
