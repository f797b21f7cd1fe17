//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward pass. [`Graph::backward`] replays the tape in
//! reverse, accumulating gradients only for nodes that (transitively) depend
//! on a leaf created with `requires_grad`.

mod conv;
mod elementwise;
mod linalg;
mod norm;
pub use norm::power_iteration as norm_power_iteration;
mod shape;

pub use conv::ConvGeom;

use crate::error::{NumError, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Finite-value policy for a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Every op output (and every leaf) is checked for NaN/Inf.
    Checked,
    /// No per-op checks; callers validate the loss.
    Training,
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    InstanceNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    AvgPool2(Var),
    Upsample2(Var),
    GlobalAvgPool(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    RowMean(Var),
    BroadcastCols(Var),
    GatherRow {
        table: Var,
        index: usize,
    },
    SpectralNorm {
        w: Var,
        u: Vec<T>,
        v: Vec<T>,
        sigma: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation tape. Values are immutable once recorded.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    mode: Mode,
}

impl<T: Element> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
        }
    }

    pub fn checked() -> Self {
        Self::new(Mode::Checked)
    }

    pub fn training() -> Self {
        Self::new(Mode::Training)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if self.mode == Mode::Checked && !value.is_finite() {
            return Err(NumError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// New constant leaf carrying `v`'s current value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if self.mode == Mode::Checked && !value.is_finite() {
            return Err(NumError::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Gradients of the single-element `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut buf = GradBuf {
            bufs: (0..self.nodes.len()).map(|_| None).collect(),
            needs: self.nodes.iter().map(|n| n.requires_grad).collect(),
            lens: self.nodes.iter().map(|n| n.value.numel()).collect(),
        };
        if let Some(g) = buf.slot(loss) {
            g[0] = T::one();
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = buf.bufs[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut buf);
            buf.bufs[idx] = Some(g);
        }
        let grads = buf
            .bufs
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.map(|data| Tensor::new(n.value.shape(), data).expect("gradient shape matches value"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, idx: usize, g: &[T], buf: &mut GradBuf<T>) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, buf),
            Op::Transpose(a) => self.transpose_backward(*a, g, buf),
            Op::SoftmaxRows(a) => Self::softmax_backward(*a, out, g, buf),
            Op::Conv2d {
                x,
                w,
                bias,
                geom,
                cols,
            } => self.conv2d_backward(*x, *w, *bias, geom, cols, g, buf),
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => self.instance_norm_backward(*x, *gamma, *beta, xhat, inv_std, g, buf),
            Op::AvgPool2(x) => self.avgpool_backward(*x, g, buf),
            Op::Upsample2(x) => self.upsample_backward(*x, g, buf),
            Op::GlobalAvgPool(x) => self.global_pool_backward(*x, g, buf),
            Op::Reshape(x) => {
                if let Some(gx) = buf.slot(*x) {
                    add_into(gx, g);
                }
            }
            Op::Permute(x, axes) => self.permute_backward(*x, axes, g, buf),
            Op::Concat(inputs, axis) => self.concat_backward(inputs, *axis, out.shape(), g, buf),
            Op::Add(a, b) => {
                if let Some(ga) = buf.slot(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = buf.slot(*b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = buf.slot(*a) {
                    add_into(ga, g);
                }
                if let Some(gb) = buf.slot(*b) {
                    gb.iter_mut().zip(g).for_each(|(d, &s)| *d -= s);
                }
            }
            Op::Mul(a, b) => self.mul_backward(*a, *b, g, buf),
            Op::Scale(a, c) => {
                if let Some(ga) = buf.slot(*a) {
                    ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *c);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = buf.slot(*a) {
                    add_into(ga, g);
                }
            }
            Op::Relu(a) => {
                let x = self.nodes[a.0].value.data();
                if let Some(ga) = buf.slot(*a) {
                    for ((d, &s), &xv) in ga.iter_mut().zip(g).zip(x) {
                        if xv > T::zero() {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = buf.slot(*a) {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *d += s * y * (T::one() - y);
                    }
                }
            }
            Op::Abs(a) => {
                let x = self.nodes[a.0].value.data();
                if let Some(ga) = buf.slot(*a) {
                    for ((d, &s), &xv) in ga.iter_mut().zip(g).zip(x) {
                        if xv > T::zero() {
                            *d += s;
                        } else if xv < T::zero() {
                            *d -= s;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = buf.slot(*a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = buf.slot(*a) {
                    let s = g[0] / T::from_f64(ga.len() as f64);
                    ga.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::RowMean(a) => {
                let cols = self.nodes[a.0].value.shape()[1];
                if let Some(ga) = buf.slot(*a) {
                    let inv = T::one() / T::from_f64(cols as f64);
                    for (row, &gr) in ga.chunks_mut(cols).zip(g) {
                        row.iter_mut().for_each(|d| *d += gr * inv);
                    }
                }
            }
            Op::BroadcastCols(a) => {
                let cols = out.shape()[1];
                if let Some(ga) = buf.slot(*a) {
                    for (d, row) in ga.iter_mut().zip(g.chunks(cols)) {
                        *d += row.iter().copied().sum::<T>();
                    }
                }
            }
            Op::GatherRow { table, index } => {
                let dim = g.len();
                if let Some(gt) = buf.slot(*table) {
                    add_into(&mut gt[index * dim..(index + 1) * dim], g);
                }
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                self.spectral_norm_backward(*w, u, v, *sigma, out, g, buf)
            }
        }
    }
}

/// Gradient buffers, allocated lazily for nodes that need them.
pub(crate) struct GradBuf<T> {
    bufs: Vec<Option<Vec<T>>>,
    needs: Vec<bool>,
    lens: Vec<usize>,
}

impl<T: Element> GradBuf<T> {
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut Vec<T>> {
        if !self.needs[v.0] {
            return None;
        }
        let len = self.lens[v.0];
        Some(self.bufs[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }
}

pub(crate) fn add_into<T: Element>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// `None` when `v` does not depend on any gradient-requiring leaf or the
    /// loss does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
