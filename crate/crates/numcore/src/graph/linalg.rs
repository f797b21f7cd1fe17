use super::{GradBuf, Graph, Op, Var};
use crate::error::{dim_err, Result};
use crate::scalar::{gemm, Element, MatRef};
use crate::tensor::Tensor;

fn matrix_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => dim_err(op, format!("expected a matrix, got shape {shape:?}")),
    }
}

impl<T: Element> Graph<T> {
    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.shape(a))?;
        let (k2, n) = matrix_dims("matmul", self.shape(b))?;
        if k != k2 {
            return dim_err("matmul", format!("inner dimensions differ: {m}×{k} · {k2}×{n}"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            &mut out,
            false,
        );
        let value = Tensor::new(&[m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub(super) fn matmul_backward(&self, a: Var, b: Var, g: &[T], buf: &mut GradBuf<T>) {
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let n = self.shape(b)[1];
        let gm = MatRef::new(g, m, n);
        if let Some(ga) = buf.slot(a) {
            gemm(gm, MatRef::new(self.value(b).data(), k, n).t(), ga, true);
        }
        if let Some(gb) = buf.slot(b) {
            gemm(MatRef::new(self.value(a).data(), m, k).t(), gm, gb, true);
        }
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = matrix_dims("transpose", self.shape(a))?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(&[c, r], out)?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    pub(super) fn transpose_backward(&self, a: Var, g: &[T], buf: &mut GradBuf<T>) {
        let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
        if let Some(ga) = buf.slot(a) {
            for i in 0..r {
                for j in 0..c {
                    ga[i * c + j] += g[j * r + i];
                }
            }
        }
    }

    /// Row-wise softmax of a matrix, stabilized by subtracting each row's max.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = matrix_dims("softmax_rows", self.shape(a))?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let value = Tensor::new(&[r, c], out)?;
        self.push("softmax_rows", value, Op::SoftmaxRows(a), &[a])
    }

    pub(super) fn softmax_backward(a: Var, out: &Tensor<T>, g: &[T], buf: &mut GradBuf<T>) {
        let c = out.shape()[1];
        if let Some(ga) = buf.slot(a) {
            for ((dst, y), gr) in ga.chunks_mut(c).zip(out.data().chunks(c)).zip(g.chunks(c)) {
                let dot: T = y.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                for ((d, &yv), &gv) in dst.iter_mut().zip(y).zip(gr) {
                    *d += yv * (gv - dot);
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
