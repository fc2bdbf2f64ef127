//! Raw numeric kernels on contiguous row-major buffers. No graph logic here.

use crate::numel;

/// Stride and zero padding of a 2-D convolution (square kernels only).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dGeom {
    pub const SAME3: Conv2dGeom = Conv2dGeom { stride: 1, pad: 1 };

    pub fn out_size(&self, size: usize, kernel: usize) -> usize {
        assert!(
            size + 2 * self.pad >= kernel,
            "kernel {kernel} larger than padded input {size}+2*{}",
            self.pad
        );
        (size + 2 * self.pad - kernel) / self.stride + 1
    }
}

/// `c[m,n] = a[m,k] * b[k,n]` with explicit strides for a and b.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    // SAFETY: the caller guarantees that a and b cover every index reachable
    // through the given strides, and c is a dense m x n row-major block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a, k as isize, 1, b, n as isize, 1, &mut out, false);
    out
}

pub(crate) fn transpose2(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

pub(crate) fn can_broadcast(from: &[usize], to: &[usize]) -> bool {
    from.len() <= to.len() && broadcast_shape(from, to).as_deref() == Some(to)
}

/// For each element of `to`, the flat index of the element of `from` that
/// broadcasts onto it.
pub(crate) fn broadcast_index(from: &[usize], to: &[usize]) -> Vec<usize> {
    let rank = to.len();
    let offset = rank - from.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..from.len()).rev() {
        strides[i + offset] = if from[i] == 1 { 0 } else { acc };
        acc *= from[i];
    }
    let total = numel(to);
    let mut out = Vec::with_capacity(total);
    if rank == 0 {
        out.push(0);
        return out;
    }
    let inner = to[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < total {
        for j in 0..inner {
            out.push(base + j * inner_stride);
        }
        // advance the outer multi-index
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            base += strides[axis];
            if idx[axis] < to[axis] {
                break;
            }
            base -= strides[axis] * to[axis];
            idx[axis] = 0;
        }
    }
    out
}

pub(crate) fn broadcast_to(data: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    broadcast_index(from, to).into_iter().map(|i| data[i]).collect()
}

/// Sums `data` (shaped `from`) down to `to`, the inverse of broadcasting.
pub(crate) fn sum_to(data: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; numel(to)];
    for (src, dst) in broadcast_index(to, from).into_iter().enumerate() {
        out[dst] += data[src];
    }
    out
}

/// Max of `data` over the broadcast groups mapping onto `to`, plus a one-hot
/// mask (first maximum wins) over `from`.
pub(crate) fn max_to(data: &[f64], from: &[usize], to: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = numel(to);
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut arg = vec![usize::MAX; n];
    for (src, dst) in broadcast_index(to, from).into_iter().enumerate() {
        if arg[dst] == usize::MAX || data[src] > best[dst] {
            best[dst] = data[src];
            arg[dst] = src;
        }
    }
    let mut mask = vec![0.0; data.len()];
    for &a in &arg {
        if a != usize::MAX {
            mask[a] = 1.0;
        }
    }
    (best, mask)
}

/// Output columns `[lo, hi)` whose input column `ox * s + kx - p` lies in
/// `[0, w)`.
fn valid_range(kx: usize, s: usize, p: usize, w: usize, wo: usize) -> (usize, usize) {
    // smallest ox with ox * s + kx >= p
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    // largest ox with ox * s + kx - p <= w - 1
    let hi = if kx > w - 1 + p { 0 } else { (w - 1 + p - kx) / s + 1 };
    (lo.min(wo), hi.min(wo).max(lo.min(wo)))
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    geom: Conv2dGeom,
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    let (s, p) = (geom.stride, geom.pad);
    let plane = ho * wo;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_range(kx, s, p, w, wo);
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                    drow[..lo].fill(0.0);
                    drow[hi..].fill(0.0);
                    if lo < hi {
                        let first = lo * s + kx - p;
                        if s == 1 {
                            drow[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (j, d) in drow[lo..hi].iter_mut().enumerate() {
                                *d = src[first + j * s];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    geom: Conv2dGeom,
    ho: usize,
    wo: usize,
    x: &mut [f64],
) {
    let (s, p) = (geom.stride, geom.pad);
    let plane = ho * wo;
    for ci in 0..c {
        let xc = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_range(kx, s, p, w, wo);
                if lo >= hi {
                    continue;
                }
                let first = lo * s + kx - p;
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * wo + lo..oy * wo + hi];
                    if s == 1 {
                        for (d, v) in dst[first..first + hi - lo].iter_mut().zip(srow) {
                            *d += v;
                        }
                    } else {
                        for (j, v) in srow.iter().enumerate() {
                            dst[first + j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Shapes involved in one convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    pub fn new(x_shape: &[usize], w_shape: &[usize], geom: Conv2dGeom) -> ConvDims {
        assert_eq!(x_shape.len(), 4, "conv input must be [N,C,H,W], got {x_shape:?}");
        assert_eq!(w_shape.len(), 4, "conv weight must be [O,C,K,K], got {w_shape:?}");
        assert_eq!(
            x_shape[1], w_shape[1],
            "conv channel mismatch: input {x_shape:?}, weight {w_shape:?}"
        );
        assert_eq!(w_shape[2], w_shape[3], "only square kernels are supported");
        let k = w_shape[2];
        ConvDims {
            n: x_shape[0],
            c: x_shape[1],
            h: x_shape[2],
            w: x_shape[3],
            o: w_shape[0],
            k,
            ho: geom.out_size(x_shape[2], k),
            wo: geom.out_size(x_shape[3], k),
        }
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.ho, self.wo]
    }

    fn ckk(&self) -> usize {
        self.c * self.k * self.k
    }
}

pub(crate) fn conv2d(x: &[f64], wt: &[f64], d: ConvDims, geom: Conv2dGeom) -> Vec<f64> {
    let plane = d.ho * d.wo;
    let ckk = d.ckk();
    let mut out = vec![0.0; d.n * d.o * plane];
    let mut cols = vec![0.0; ckk * plane];
    for ni in 0..d.n {
        let xn = &x[ni * d.c * d.h * d.w..(ni + 1) * d.c * d.h * d.w];
        im2col(xn, d.c, d.h, d.w, d.k, geom, d.ho, d.wo, &mut cols);
        let on = &mut out[ni * d.o * plane..(ni + 1) * d.o * plane];
        gemm(d.o, ckk, plane, wt, ckk as isize, 1, &cols, plane as isize, 1, on, false);
    }
    out
}

/// Adjoint of `conv2d` in its input: maps an output-shaped gradient back to
/// the input shape.
pub(crate) fn conv2d_input_grad(g: &[f64], wt: &[f64], d: ConvDims, geom: Conv2dGeom) -> Vec<f64> {
    let plane = d.ho * d.wo;
    let ckk = d.ckk();
    let mut out = vec![0.0; d.n * d.c * d.h * d.w];
    let mut cols = vec![0.0; ckk * plane];
    for ni in 0..d.n {
        let gn = &g[ni * d.o * plane..(ni + 1) * d.o * plane];
        // cols = W^T g_n ; W is [O, ckk] row-major, read transposed via strides
        gemm(ckk, d.o, plane, wt, 1, ckk as isize, gn, plane as isize, 1, &mut cols, false);
        let xn = &mut out[ni * d.c * d.h * d.w..(ni + 1) * d.c * d.h * d.w];
        col2im(&cols, d.c, d.h, d.w, d.k, geom, d.ho, d.wo, xn);
    }
    out
}

/// Adjoint of `conv2d` in its weight.
pub(crate) fn conv2d_weight_grad(x: &[f64], g: &[f64], d: ConvDims, geom: Conv2dGeom) -> Vec<f64> {
    let plane = d.ho * d.wo;
    let ckk = d.ckk();
    let mut out = vec![0.0; d.o * ckk];
    let mut cols = vec![0.0; ckk * plane];
    for ni in 0..d.n {
        let xn = &x[ni * d.c * d.h * d.w..(ni + 1) * d.c * d.h * d.w];
        im2col(xn, d.c, d.h, d.w, d.k, geom, d.ho, d.wo, &mut cols);
        let gn = &g[ni * d.o * plane..(ni + 1) * d.o * plane];
        // out += g_n [O, plane] * cols^T [plane, ckk]
        gemm(d.o, plane, ckk, gn, plane as isize, 1, &cols, 1, plane as isize, &mut out, true);
    }
    out
}

/// Nearest-neighbour 2x upsampling of the two trailing axes.
pub(crate) fn upsample2(x: &[f64], shape: &[usize]) -> Vec<f64> {
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = x.len() / (h * w);
    let mut out = vec![0.0; x.len() * 4];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// 2x2 sum pooling of the two trailing axes (adjoint of `upsample2`).
pub(crate) fn sum_pool2(x: &[f64], shape: &[usize]) -> Vec<f64> {
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    assert!(h % 2 == 0 && w % 2 == 0, "sum_pool2 needs even spatial dims, got {shape:?}");
    let (ho, wo) = (h / 2, w / 2);
    let planes = x.len() / (h * w);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..h {
            for xx in 0..w {
                dst[(y / 2) * wo + xx / 2] += src[y * w + xx];
            }
        }
    }
    out
}

/// Outer count and inner block size around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel(&shape[..axis]), numel(&shape[axis + 1..]))
}

pub(crate) fn concat(parts: &[&[f64]], shapes: &[&[usize]], axis: usize) -> Vec<f64> {
    let (outer, inner) = split_at_axis(shapes[0], axis);
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(total);
    for o in 0..outer {
        for (p, s) in parts.iter().zip(shapes) {
            let chunk = s[axis] * inner;
            out.extend_from_slice(&p[o * chunk..(o + 1) * chunk]);
        }
    }
    out
}

pub(crate) fn narrow(x: &[f64], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<f64> {
    let (outer, inner) = split_at_axis(shape, axis);
    let full = shape[axis] * inner;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        out.extend_from_slice(&x[o * full + start * inner..o * full + (start + len) * inner]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_index_matches_naive() {
        let from = [3, 1, 2];
        let to = [2, 3, 4, 2];
        let idx = broadcast_index(&from, &to);
        let mut naive = Vec::new();
        for _a in 0..2 {
            for b in 0..3 {
                for _c in 0..4 {
                    for d in 0..2 {
                        naive.push(b * 2 + d);
                    }
                }
            }
        }
        assert_eq!(idx, naive);
    }

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(broadcast_shape(&[4, 1], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[], &[2, 2]), Some(vec![2, 2]));
        assert_eq!(broadcast_shape(&[2], &[3]), None);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let d = ConvDims::new(&[2, 2, 5, 4], &[3, 2, 3, 3], Conv2dGeom { stride: 2, pad: 1 });
        let x: Vec<f64> = (0..2 * 2 * 5 * 4).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3).collect();
        let y = conv2d(&x, &w, d, Conv2dGeom { stride: 2, pad: 1 });
        for n in 0..d.n {
            for o in 0..d.o {
                for oy in 0..d.ho {
                    for ox in 0..d.wo {
                        let mut acc = 0.0;
                        for c in 0..d.c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= 5 || ix >= 4 {
                                        continue;
                                    }
                                    acc += x[((n * 2 + c) * 5 + iy as usize) * 4 + ix as usize]
                                        * w[((o * 2 + c) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                        let got = y[((n * d.o + o) * d.ho + oy) * d.wo + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
