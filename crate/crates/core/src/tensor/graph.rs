use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Narrow {
        input: Var,
        offset: usize,
    },
    Reshape {
        input: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    AddConst {
        input: Var,
    },
    Powi {
        input: Var,
        exp: i32,
    },
    Sum {
        input: Var,
    },
    SumSquares {
        input: Var,
    },
    Mix {
        cat: Var,
        z: Var,
        w: Var,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Record of the operations executed during one forward pass.
///
/// Nodes are appended in execution order, so the record is topologically
/// sorted by construction. [`Graph::backward`] walks it once in reverse.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Places `tensor` on the graph as a leaf. It receives a gradient during
    /// [`Graph::backward`] iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let value = Tensor::from_shared(tensor.shape().to_vec(), tensor.shared_data().clone());
        let requires_grad = tensor.requires_grad();
        self.push_node(value, Op::Leaf, requires_grad)
    }

    /// Leaf that always receives a gradient.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let value = Tensor::from_shared(tensor.shape().to_vec(), tensor.shared_data().clone());
        self.push_node(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        let value = Tensor::from_shared(tensor.shape().to_vec(), tensor.shared_data().clone());
        self.push_node(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(&Tensor::scalar(value))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to a leaf. Interior
    /// gradients are released once they have been propagated.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Moves the gradient of `var` out of the graph.
    pub fn take_grad(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Clears all gradients so that `backward` may run again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "output of {} (node {})",
                op_name(&op),
                self.nodes.len()
            )));
        }
        Ok(self.push_node(value, op, requires_grad))
    }

    /// Propagates d`loss`/d(node) to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract(
                "backward called twice on the same graph without reset",
            ));
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);

        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(nodes, grads, node, &g);
        }

        for (i, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::MaxPool { .. } => "maxpool2d",
        Op::Linear { .. } => "linear",
        Op::Relu { .. } => "relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Concat { .. } => "concat",
        Op::Narrow { .. } => "narrow",
        Op::Reshape { .. } => "reshape",
        Op::Dropout { .. } => "dropout",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::AddConst { .. } => "add_const",
        Op::Powi { .. } => "powi",
        Op::Sum { .. } => "sum",
        Op::SumSquares { .. } => "sum_squares",
        Op::Mix { .. } => "mix",
    }
}

/// Returns the gradient buffer of `var`, allocating zeros on first use, or
/// `None` if `var` does not need a gradient.
fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    var: Var,
) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[var.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.numel();
    Some(grads[var.0].get_or_insert_with(|| vec![0.0; n]))
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            kernel,
            bias,
            geom,
            cols,
        } => {
            let c_out = nodes[kernel.0].value.shape()[0];
            let p = geom.out_len();
            let patch = geom.patch_len();
            if let Some(dk) = slot(nodes, grads, *kernel) {
                kernels::gemm(c_out, p, patch, g, false, cols, true, 1.0, dk);
            }
            if let Some(db) = slot(nodes, grads, *bias) {
                for (o, b) in db.iter_mut().enumerate() {
                    *b += g[o * p..(o + 1) * p].iter().sum::<f64>();
                }
            }
            if nodes[input.0].requires_grad {
                let mut dcols = vec![0.0; patch * p];
                kernels::gemm(patch, c_out, p, val(*kernel), true, g, false, 0.0, &mut dcols);
                let di = slot(nodes, grads, *input).unwrap();
                kernels::col2im_add(geom, &dcols, di);
            }
        }
        Op::MaxPool { input, argmax } => {
            if let Some(di) = slot(nodes, grads, *input) {
                for (gi, &src) in g.iter().zip(argmax) {
                    di[src] += gi;
                }
            }
        }
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let x = val(*input);
            let d_in = x.len();
            if let Some(dw) = slot(nodes, grads, *weight) {
                for (row, &go) in dw.chunks_exact_mut(d_in).zip(g) {
                    if go != 0.0 {
                        kernels::axpy(go, x, row);
                    }
                }
            }
            if let Some(db) = slot(nodes, grads, *bias) {
                kernels::axpy(1.0, g, db);
            }
            if nodes[input.0].requires_grad {
                let w = val(*weight);
                let dx = slot(nodes, grads, *input).unwrap();
                for (row, &go) in w.chunks_exact(d_in).zip(g) {
                    if go != 0.0 {
                        kernels::axpy(go, row, dx);
                    }
                }
            }
        }
        Op::Relu { input } => {
            if let Some(di) = slot(nodes, grads, *input) {
                for ((d, &x), &gi) in di.iter_mut().zip(val(*input)).zip(g) {
                    if x > 0.0 {
                        *d += gi;
                    }
                }
            }
        }
        Op::Sigmoid { input } => {
            let y = node.value.data();
            if let Some(di) = slot(nodes, grads, *input) {
                for ((d, &yi), &gi) in di.iter_mut().zip(y).zip(g) {
                    *d += gi * yi * (1.0 - yi);
                }
            }
        }
        Op::Concat { inputs } => {
            let mut offset = 0;
            for v in inputs {
                let n = nodes[v.0].value.numel();
                if let Some(di) = slot(nodes, grads, *v) {
                    kernels::axpy(1.0, &g[offset..offset + n], di);
                }
                offset += n;
            }
        }
        Op::Narrow { input, offset } => {
            if let Some(di) = slot(nodes, grads, *input) {
                kernels::axpy(1.0, g, &mut di[*offset..*offset + g.len()]);
            }
        }
        Op::Reshape { input } => {
            if let Some(di) = slot(nodes, grads, *input) {
                kernels::axpy(1.0, g, di);
            }
        }
        Op::Dropout { input, mask } => {
            if let Some(di) = slot(nodes, grads, *input) {
                for ((d, &m), &gi) in di.iter_mut().zip(mask).zip(g) {
                    *d += m * gi;
                }
            }
        }
        Op::Add { a, b } => {
            broadcast_grad(nodes, grads, *a, g, |_| 1.0);
            broadcast_grad(nodes, grads, *b, g, |_| 1.0);
        }
        Op::Sub { a, b } => {
            broadcast_grad(nodes, grads, *a, g, |_| 1.0);
            broadcast_grad(nodes, grads, *b, g, |_| -1.0);
        }
        Op::Mul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
            broadcast_grad(nodes, grads, *a, g, |i| pick(bv, i));
            broadcast_grad(nodes, grads, *b, g, |i| pick(av, i));
        }
        Op::Scale { input, factor } => {
            if let Some(di) = slot(nodes, grads, *input) {
                kernels::axpy(*factor, g, di);
            }
        }
        Op::AddConst { input } => {
            if let Some(di) = slot(nodes, grads, *input) {
                kernels::axpy(1.0, g, di);
            }
        }
        Op::Powi { input, exp } => {
            if let Some(di) = slot(nodes, grads, *input) {
                for ((d, &x), &gi) in di.iter_mut().zip(val(*input)).zip(g) {
                    *d += gi * f64::from(*exp) * x.powi(exp - 1);
                }
            }
        }
        Op::Sum { input } => {
            if let Some(di) = slot(nodes, grads, *input) {
                di.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::SumSquares { input } => {
            if let Some(di) = slot(nodes, grads, *input) {
                for (d, &x) in di.iter_mut().zip(val(*input)) {
                    *d += 2.0 * x * g[0];
                }
            }
        }
        Op::Mix { cat, z, w } => {
            let wv = val(*w)[0];
            if let Some(dc) = slot(nodes, grads, *cat) {
                kernels::axpy(1.0 - wv, g, dc);
            }
            if let Some(dz) = slot(nodes, grads, *z) {
                kernels::axpy(wv, g, dz);
            }
            if nodes[w.0].requires_grad {
                let (cv, zv) = (val(*cat), val(*z));
                let s: f64 = g
                    .iter()
                    .zip(cv.iter().zip(zv))
                    .map(|(gi, (c, z))| gi * (z - c))
                    .sum();
                slot(nodes, grads, *w).unwrap()[0] += s;
            }
        }
    }
}

/// Accumulates `g[i] * factor(i)` into `var`, summing when `var` is a
/// broadcast scalar.
fn broadcast_grad(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    var: Var,
    g: &[f64],
    factor: impl Fn(usize) -> f64,
) {
    if let Some(d) = slot(nodes, grads, var) {
        if d.len() == g.len() {
            for (i, (di, gi)) in d.iter_mut().zip(g).enumerate() {
                *di += gi * factor(i);
            }
        } else {
            d[0] += g.iter().enumerate().map(|(i, gi)| gi * factor(i)).sum::<f64>();
        }
    }
}
