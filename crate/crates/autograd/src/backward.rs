use std::collections::{HashMap, HashSet};

use crate::kernels::Conv2dGeom;
use crate::tensor::{with_grad, Tensor};

#[derive(Debug)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    Shift,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Softplus,
    Sqrt,
    Square,
    LeakyRelu(f64),
    Abs,
    Clamp(f64, f64),
    BroadcastTo { from: Vec<usize> },
    SumTo { from: Vec<usize> },
    MaxTo { from: Vec<usize>, mask: Tensor },
    Reshape { from: Vec<usize> },
    Transpose,
    Matmul,
    Conv(Conv2dGeom),
    ConvInputGrad(Conv2dGeom),
    ConvWeightGrad(Conv2dGeom),
    Upsample2,
    SumPool2,
    Concat { axis: usize, sizes: Vec<usize> },
    Narrow { axis: usize, start: usize, full: usize },
}

fn mask_of(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::leaf(x.data().iter().map(|&v| f(v)).collect(), x.shape().to_vec(), false)
}

/// Vector-Jacobian product of one node. `g` has the node's output shape.
/// Only entries whose `need` flag is set are computed.
fn vjp(op: &Op, inputs: &[Tensor], g: &Tensor, need: &[bool]) -> Vec<Option<Tensor>> {
    let x = &inputs[0];
    let one = |t: Tensor| vec![Some(t)];
    match op {
        Op::Add => vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())],
        Op::Sub => vec![need[0].then(|| g.clone()), need[1].then(|| g.neg())],
        Op::Mul => {
            let y = &inputs[1];
            vec![need[0].then(|| g * y), need[1].then(|| g * x)]
        }
        Op::Div => {
            let y = &inputs[1];
            vec![need[0].then(|| g / y), need[1].then(|| (g * x).neg() / y.square())]
        }
        Op::Scale(c) => one(g.scale(*c)),
        Op::Shift => one(g.clone()),
        Op::Exp => one(g * &x.exp()),
        Op::Ln => one(g / x),
        Op::Tanh => {
            let t = x.tanh();
            one(g * &(t.square().neg().add_scalar(1.0)))
        }
        Op::Sigmoid => {
            let s = x.sigmoid();
            one(g * &(&s * &s.neg().add_scalar(1.0)))
        }
        Op::Softplus => one(g * &x.sigmoid()),
        Op::Sqrt => one(g / &x.sqrt().scale(2.0)),
        Op::Square => one(g * &x.scale(2.0)),
        Op::LeakyRelu(slope) => {
            let s = *slope;
            one(g.mul_const(&mask_of(x, |v| if v > 0.0 { 1.0 } else { s })))
        }
        Op::Abs => one(g.mul_const(&mask_of(x, |v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        }))),
        Op::Clamp(lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            one(g.mul_const(&mask_of(x, |v| if v > lo && v < hi { 1.0 } else { 0.0 })))
        }
        Op::BroadcastTo { from } => one(g.sum_to(from)),
        Op::SumTo { from } => one(g.broadcast_to(from)),
        Op::MaxTo { from, mask } => one(g.broadcast_to(from).mul_const(mask)),
        Op::Reshape { from } => one(g.reshape(from)),
        Op::Transpose => one(g.t()),
        Op::Matmul => {
            let y = &inputs[1];
            vec![need[0].then(|| g.matmul(&y.t())), need[1].then(|| x.t().matmul(g))]
        }
        Op::Conv(geom) => {
            let w = &inputs[1];
            vec![
                need[0].then(|| g.conv2d_input_grad(w, x.shape(), *geom)),
                need[1].then(|| x.conv2d_weight_grad(g, w.shape(), *geom)),
            ]
        }
        Op::ConvInputGrad(geom) => {
            // x here is the output gradient fed to the transposed conv
            let w = &inputs[1];
            vec![
                need[0].then(|| g.conv2d(w, *geom)),
                need[1].then(|| g.conv2d_weight_grad(x, w.shape(), *geom)),
            ]
        }
        Op::ConvWeightGrad(geom) => {
            let out_grad = &inputs[1];
            vec![
                need[0].then(|| out_grad.conv2d_input_grad(g, x.shape(), *geom)),
                need[1].then(|| x.conv2d(g, *geom)),
            ]
        }
        Op::Upsample2 => one(g.sum_pool2x()),
        Op::SumPool2 => one(g.upsample2x()),
        Op::Concat { axis, sizes } => {
            let mut start = 0;
            sizes
                .iter()
                .zip(need)
                .map(|(&len, &n)| {
                    let piece = n.then(|| g.narrow(*axis, start, len));
                    start += len;
                    piece
                })
                .collect()
        }
        Op::Narrow { axis, start, full } => {
            let mut parts = Vec::with_capacity(3);
            let mut pad_shape = g.shape().to_vec();
            if *start > 0 {
                pad_shape[*axis] = *start;
                parts.push(Tensor::zeros(&pad_shape));
            }
            parts.push(g.clone());
            let after = full - start - g.dim(*axis);
            if after > 0 {
                pad_shape[*axis] = after;
                parts.push(Tensor::zeros(&pad_shape));
            }
            let refs: Vec<&Tensor> = parts.iter().collect();
            one(Tensor::concat(&refs, *axis))
        }
    }
}

/// Nodes reachable from `root` through tracked edges, inputs before users.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(gf) = t.grad_fn() {
            for inp in &gf.inputs {
                if inp.requires_grad() && !visited.contains(&inp.id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }
    order
}

/// Gradients of a scalar `output` with respect to each tensor in `wrt`.
///
/// Tensors that `output` does not depend on get a zero gradient. With
/// `create_graph` the returned gradients are themselves differentiable.
pub fn grad(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
    assert_eq!(
        output.numel(),
        1,
        "grad() needs a scalar output, got shape {:?}",
        output.shape()
    );
    grad_with_seed(output, &Tensor::ones(output.shape()), wrt, create_graph)
}

/// Vector-Jacobian product: gradients of `<seed, output>`.
pub fn grad_with_seed(output: &Tensor, seed: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
    assert_eq!(output.shape(), seed.shape(), "seed shape must match output");
    let zeros = || wrt.iter().map(|t| Tensor::zeros(t.shape())).collect();
    if !output.requires_grad() {
        return zeros();
    }
    let targets: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let order = topo_order(output);

    // a node is needed if some target is reachable from it (or it is one)
    let mut needed: HashSet<u64> = HashSet::new();
    for t in &order {
        let reaches = targets.contains(&t.id())
            || t
                .grad_fn()
                .is_some_and(|gf| gf.inputs.iter().any(|i| needed.contains(&i.id())));
        if reaches {
            needed.insert(t.id());
        }
    }
    if !needed.contains(&output.id()) {
        return zeros();
    }

    with_grad(create_graph, || {
        let mut grads: HashMap<u64, Tensor> = HashMap::new();
        grads.insert(output.id(), seed.detach());
        for node in order.iter().rev() {
            if !needed.contains(&node.id()) {
                continue;
            }
            let Some(gf) = node.grad_fn() else { continue };
            let Some(g) = grads.get(&node.id()).cloned() else { continue };
            let need: Vec<bool> = gf.inputs.iter().map(|i| needed.contains(&i.id())).collect();
            if !need.iter().any(|&n| n) {
                continue;
            }
            let input_grads = vjp(&gf.op, &gf.inputs, &g, &need);
            for ((inp, ig), n) in gf.inputs.iter().zip(input_grads).zip(&need) {
                if !n {
                    continue;
                }
                let ig = ig.expect("vjp skipped a needed input");
                debug_assert_eq!(ig.shape(), inp.shape(), "{:?}", gf.op);
                let acc = match grads.remove(&inp.id()) {
                    Some(prev) => &prev + &ig,
                    None => ig,
                };
                grads.insert(inp.id(), acc);
            }
            // free intermediate gradients as soon as they are consumed
            if !targets.contains(&node.id()) {
                grads.remove(&node.id());
            }
        }
        wrt.iter()
            .map(|t| grads.get(&t.id()).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    })
}
