use super::{add_into, GradBuf, Graph, Op, Var};
use crate::error::{dim_err, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;

/// For each flat output index of `permute(shape, axes)`, the flat input index.
fn permute_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..numel {
        map.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

impl<T: Element> Graph<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() || shape.contains(&0) {
            return dim_err(
                "reshape",
                format!("cannot reshape {:?} into {shape:?}", self.shape(a)),
            );
        }
        let v = self.value(a).reshaped(shape)?;
        self.push("reshape", v, Op::Reshape(a), &[a])
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true)) {
            return dim_err("permute", format!("{axes:?} is not a permutation of {} axes", shape.len()));
        }
        let map = permute_map(&shape, axes);
        let src = self.value(a).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let v = Tensor::new(&out_shape, data)?;
        self.push("permute", v, Op::Permute(a, axes.to_vec()), &[a])
    }

    pub(super) fn permute_backward(&self, a: Var, axes: &[usize], g: &[T], buf: &mut GradBuf<T>) {
        let map = permute_map(self.shape(a), axes);
        if let Some(ga) = buf.slot(a) {
            for (&src, &gv) in map.iter().zip(g) {
                ga[src] += gv;
            }
        }
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return dim_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return dim_err("concat", format!("axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return dim_err("concat", format!("shape {s:?} incompatible with {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let block = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(&out_shape, data)?;
        self.push("concat", value, Op::Concat(inputs.to_vec(), axis), inputs)
    }

    pub(super) fn concat_backward(
        &self,
        inputs: &[Var],
        axis: usize,
        out_shape: &[usize],
        g: &[T],
        buf: &mut GradBuf<T>,
    ) {
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let row = out_shape[axis] * inner;
        let mut start = 0;
        for &v in inputs {
            let block = self.shape(v)[axis] * inner;
            if let Some(gv) = buf.slot(v) {
                for o in 0..outer {
                    add_into(
                        &mut gv[o * block..(o + 1) * block],
                        &g[o * row + start..o * row + start + block],
                    );
                }
            }
            start += block;
        }
    }
}
