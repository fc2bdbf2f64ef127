use std::ops;

use crate::backward::Op;
use crate::kernels::{self, Conv2dGeom, ConvDims};
use crate::numel;
use crate::tensor::Tensor;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tensor {
    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(data, self.shape().to_vec(), op, vec![self.clone()])
    }

    fn zip(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Tensor {
        if self.shape() != other.shape() {
            let shape = kernels::broadcast_shape(self.shape(), other.shape()).unwrap_or_else(|| {
                panic!("cannot broadcast {:?} with {:?}", self.shape(), other.shape())
            });
            return self.broadcast_to(&shape).zip(&other.broadcast_to(&shape), op, f);
        }
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), op, vec![self.clone(), other.clone()])
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        self.zip(other, Op::Div, |a, b| a / b)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(Op::Scale(c), |v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(Op::Shift, |v| v + c)
    }

    pub fn exp(&self) -> Tensor {
        self.map(Op::Exp, f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        self.map(Op::Ln, f64::ln)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(Op::Sigmoid, sigmoid)
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&self) -> Tensor {
        self.map(Op::Softplus, softplus)
    }

    pub fn sqrt(&self) -> Tensor {
        self.map(Op::Sqrt, f64::sqrt)
    }

    pub fn square(&self) -> Tensor {
        self.map(Op::Square, |v| v * v)
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.map(Op::LeakyRelu(slope), |v| if v > 0.0 { v } else { v * slope })
    }

    pub fn abs(&self) -> Tensor {
        self.map(Op::Abs, f64::abs)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(Op::Clamp(lo, hi), |v| v.clamp(lo, hi))
    }

    /// Multiplies by a constant of the same (or broadcastable) shape without
    /// tracking the constant. Used for masks.
    pub fn mul_const(&self, mask: &Tensor) -> Tensor {
        self.mul(&mask.detach())
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        assert!(
            kernels::can_broadcast(self.shape(), shape),
            "cannot broadcast {:?} to {:?}",
            self.shape(),
            shape
        );
        let data = kernels::broadcast_to(self.data(), self.shape(), shape);
        Tensor::from_op(
            data,
            shape.to_vec(),
            Op::BroadcastTo { from: self.shape().to_vec() },
            vec![self.clone()],
        )
    }

    /// Sums over broadcast axes so the result has `shape` (inverse of
    /// [`Tensor::broadcast_to`]).
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        assert!(
            kernels::can_broadcast(shape, self.shape()),
            "cannot sum {:?} down to {:?}",
            self.shape(),
            shape
        );
        let data = kernels::sum_to(self.data(), self.shape(), shape);
        Tensor::from_op(
            data,
            shape.to_vec(),
            Op::SumTo { from: self.shape().to_vec() },
            vec![self.clone()],
        )
    }

    /// Maximum over broadcast axes; the gradient flows to the first maximum.
    pub fn max_to(&self, shape: &[usize]) -> Tensor {
        assert!(
            kernels::can_broadcast(shape, self.shape()),
            "cannot reduce {:?} to {:?}",
            self.shape(),
            shape
        );
        let (data, mask) = kernels::max_to(self.data(), self.shape(), shape);
        let mask = Tensor::leaf(mask, self.shape().to_vec(), false);
        Tensor::from_op(
            data,
            shape.to_vec(),
            Op::MaxTo { from: self.shape().to_vec(), mask },
            vec![self.clone()],
        )
    }

    /// Sum of all elements, shape `[]`.
    pub fn sum(&self) -> Tensor {
        self.sum_to(&[]).reshape(&[])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    fn reduced_shape(&self, axes: &[usize]) -> Vec<usize> {
        let mut s = self.shape().to_vec();
        for &a in axes {
            assert!(a < s.len(), "axis {a} out of range for {:?}", self.shape());
            s[a] = 1;
        }
        s
    }

    fn drop_axes(&self, axes: &[usize]) -> Vec<usize> {
        self.shape()
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect()
    }

    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Tensor {
        let kept = self.sum_to(&self.reduced_shape(axes));
        if keepdim {
            kept
        } else {
            kept.reshape(&self.drop_axes(axes))
        }
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Tensor {
        let count: usize = axes.iter().map(|&a| self.dim(a)).product();
        self.sum_axes(axes, keepdim).scale(1.0 / count as f64)
    }

    pub fn max_axes(&self, axes: &[usize], keepdim: bool) -> Tensor {
        let kept = self.max_to(&self.reduced_shape(axes));
        if keepdim {
            kept
        } else {
            kept.reshape(&self.drop_axes(axes))
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} to {:?}",
            self.shape(),
            shape
        );
        if self.shape() == shape {
            return self.clone();
        }
        Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            Op::Reshape { from: self.shape().to_vec() },
            vec![self.clone()],
        )
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Tensor {
        assert_eq!(self.rank(), 2, "t() needs a matrix, got {:?}", self.shape());
        let (r, c) = (self.dim(0), self.dim(1));
        Tensor::from_op(
            kernels::transpose2(self.data(), r, c),
            vec![c, r],
            Op::Transpose,
            vec![self.clone()],
        )
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert!(
            self.rank() == 2 && other.rank() == 2 && self.dim(1) == other.dim(0),
            "matmul shape mismatch {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (m, k, n) = (self.dim(0), self.dim(1), other.dim(1));
        Tensor::from_op(
            kernels::matmul(self.data(), other.data(), m, k, n),
            vec![m, n],
            Op::Matmul,
            vec![self.clone(), other.clone()],
        )
    }

    /// Cross-correlation of `[N,C,H,W]` input with `[O,C,K,K]` weights.
    pub fn conv2d(&self, weight: &Tensor, geom: Conv2dGeom) -> Tensor {
        let d = ConvDims::new(self.shape(), weight.shape(), geom);
        Tensor::from_op(
            kernels::conv2d(self.data(), weight.data(), d, geom),
            d.out_shape(),
            Op::Conv(geom),
            vec![self.clone(), weight.clone()],
        )
    }

    /// Gradient of `conv2d` with respect to its input, given the output
    /// gradient `self` (transposed convolution).
    pub fn conv2d_input_grad(&self, weight: &Tensor, input_shape: &[usize], geom: Conv2dGeom) -> Tensor {
        let d = ConvDims::new(input_shape, weight.shape(), geom);
        assert_eq!(self.shape(), d.out_shape().as_slice(), "conv input-grad shape mismatch");
        Tensor::from_op(
            kernels::conv2d_input_grad(self.data(), weight.data(), d, geom),
            input_shape.to_vec(),
            Op::ConvInputGrad(geom),
            vec![self.clone(), weight.clone()],
        )
    }

    /// Gradient of `conv2d` with respect to its weight, given the input
    /// `self` and the output gradient.
    pub fn conv2d_weight_grad(&self, out_grad: &Tensor, weight_shape: &[usize], geom: Conv2dGeom) -> Tensor {
        let d = ConvDims::new(self.shape(), weight_shape, geom);
        assert_eq!(out_grad.shape(), d.out_shape().as_slice(), "conv weight-grad shape mismatch");
        Tensor::from_op(
            kernels::conv2d_weight_grad(self.data(), out_grad.data(), d, geom),
            weight_shape.to_vec(),
            Op::ConvWeightGrad(geom),
            vec![self.clone(), out_grad.clone()],
        )
    }

    /// Nearest-neighbour 2x upsampling of the trailing two axes.
    pub fn upsample2x(&self) -> Tensor {
        assert!(self.rank() >= 2);
        let mut shape = self.shape().to_vec();
        let r = shape.len();
        shape[r - 2] *= 2;
        shape[r - 1] *= 2;
        Tensor::from_op(
            kernels::upsample2(self.data(), self.shape()),
            shape,
            Op::Upsample2,
            vec![self.clone()],
        )
    }

    pub fn sum_pool2x(&self) -> Tensor {
        assert!(self.rank() >= 2);
        let mut shape = self.shape().to_vec();
        let r = shape.len();
        shape[r - 2] /= 2;
        shape[r - 1] /= 2;
        Tensor::from_op(
            kernels::sum_pool2(self.data(), self.shape()),
            shape,
            Op::SumPool2,
            vec![self.clone()],
        )
    }

    pub fn avg_pool2x(&self) -> Tensor {
        self.sum_pool2x().scale(0.25)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        for p in parts {
            let ok = p.rank() == first.len()
                && p.shape().iter().zip(first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            assert!(ok, "concat shape mismatch on axis {axis}: {:?} vs {:?}", p.shape(), first);
        }
        let datas: Vec<&[f64]> = parts.iter().map(|p| p.data()).collect();
        let shapes: Vec<&[usize]> = parts.iter().map(|p| p.shape()).collect();
        let mut shape = first.to_vec();
        shape[axis] = parts.iter().map(|p| p.dim(axis)).sum();
        Tensor::from_op(
            kernels::concat(&datas, &shapes, axis),
            shape,
            Op::Concat { axis, sizes: parts.iter().map(|p| p.dim(axis)).collect() },
            parts.iter().map(|&p| p.clone()).collect(),
        )
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        assert!(
            start + len <= self.dim(axis),
            "narrow {start}+{len} out of range for axis {axis} of {:?}",
            self.shape()
        );
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(
            kernels::narrow(self.data(), self.shape(), axis, start, len),
            shape,
            Op::Narrow { axis, start, full: self.dim(axis) },
            vec![self.clone()],
        )
    }
}

macro_rules! binary_operator {
    ($trait:ident, $method:ident) => {
        impl ops::$trait<&Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                Tensor::$method(self, rhs)
            }
        }
        impl ops::$trait<Tensor> for Tensor {
            type Output = Tensor;
            fn $method(self, rhs: Tensor) -> Tensor {
                Tensor::$method(&self, &rhs)
            }
        }
        impl ops::$trait<&Tensor> for Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                Tensor::$method(&self, rhs)
            }
        }
    };
}

binary_operator!(Add, add);
binary_operator!(Sub, sub);
binary_operator!(Mul, mul);
binary_operator!(Div, div);

impl ops::Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        Tensor::neg(self)
    }
}

impl ops::Neg for Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        Tensor::neg(&self)
    }
}

impl ops::Mul<f64> for &Tensor {
    type Output = Tensor;
    fn mul(self, rhs: f64) -> Tensor {
        self.scale(rhs)
    }
}

impl ops::Mul<f64> for Tensor {
    type Output = Tensor;
    fn mul(self, rhs: f64) -> Tensor {
        self.scale(rhs)
    }
}
