use super::{GradBuf, Graph, Op, Var};
use crate::error::{dim_err, Result};
use crate::scalar::Element;
use crate::tensor::Tensor;

impl<T: Element> Graph<T> {
    /// Per-channel normalization of a `C×…` tensor over its trailing axes,
    /// followed by an optional per-channel affine map.
    pub fn instance_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return dim_err("instance_norm", format!("expected C×…, got {shape:?}"));
        }
        let c = shape[0];
        let n = shape[1..].iter().product::<usize>();
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [c] {
                return dim_err(
                    "instance_norm",
                    format!("affine parameter shape {:?} != [{c}]", self.shape(p)),
                );
            }
        }
        let eps = T::from_f64(eps);
        let inv_n = T::one() / T::from_f64(n as f64);
        let src = self.value(x).data();
        let mut xhat = Vec::with_capacity(c * n);
        let mut inv_std = Vec::with_capacity(c);
        for ch in src.chunks(n) {
            let mean = ch.iter().copied().sum::<T>() * inv_n;
            let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(ch.iter().map(|&v| (v - mean) * is));
        }
        let mut out = xhat.clone();
        if let Some(gm) = gamma {
            for (row, &gv) in out.chunks_mut(n).zip(self.value(gm).data()) {
                row.iter_mut().for_each(|v| *v *= gv);
            }
        }
        if let Some(bt) = beta {
            for (row, &bv) in out.chunks_mut(n).zip(self.value(bt).data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(&shape, out)?;
        let mut parents = vec![x];
        parents.extend(gamma);
        parents.extend(beta);
        self.push(
            "instance_norm",
            value,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &parents,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn instance_norm_backward(
        &self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: &[T],
        inv_std: &[T],
        g: &[T],
        buf: &mut GradBuf<T>,
    ) {
        let c = inv_std.len();
        let n = xhat.len() / c;
        if let Some(bt) = beta {
            if let Some(gb) = buf.slot(bt) {
                for (d, row) in gb.iter_mut().zip(g.chunks(n)) {
                    *d += row.iter().copied().sum::<T>();
                }
            }
        }
        if let Some(gm) = gamma {
            if let Some(gg) = buf.slot(gm) {
                for ((d, row), xh) in gg.iter_mut().zip(g.chunks(n)).zip(xhat.chunks(n)) {
                    *d += row.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
                }
            }
        }
        if !buf.needs[x.0] {
            return;
        }
        let gammas: Vec<T> = match gamma {
            Some(gm) => self.value(gm).data().to_vec(),
            None => vec![T::one(); c],
        };
        let inv_n = T::one() / T::from_f64(n as f64);
        if let Some(gx) = buf.slot(x) {
            for ch in 0..c {
                let range = ch * n..(ch + 1) * n;
                let gr = &g[range.clone()];
                let xh = &xhat[range.clone()];
                let scale = gammas[ch];
                let sum_g: T = gr.iter().copied().sum::<T>() * scale;
                let sum_gx: T = gr.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * scale;
                let k = inv_std[ch];
                for ((d, &gv), &xv) in gx[range].iter_mut().zip(gr).zip(xh) {
                    *d += k * (gv * scale - inv_n * (sum_g + xv * sum_gx));
                }
            }
        }
    }

    /// `w / σ` with `σ = uᵀ W v`, where `W` is `w` flattened to
    /// `out × rest`. `u` and `v` are treated as constants.
    pub fn spectral_norm(&mut self, w: Var, u: &[T], v: &[T]) -> Result<Var> {
        let shape = self.shape(w).to_vec();
        let rows = shape[0];
        let cols = self.value(w).numel() / rows;
        if u.len() != rows || v.len() != cols {
            return dim_err(
                "spectral_norm",
                format!("vectors of length {}/{} for a {rows}×{cols} weight", u.len(), v.len()),
            );
        }
        let sigma = bilinear(self.value(w).data(), u, v);
        let inv = T::one() / sigma;
        let value = self.value(w).map(|x| x * inv);
        self.push(
            "spectral_norm",
            value,
            Op::SpectralNorm {
                w,
                u: u.to_vec(),
                v: v.to_vec(),
                sigma,
            },
            &[w],
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn spectral_norm_backward(
        &self,
        w: Var,
        u: &[T],
        v: &[T],
        sigma: T,
        out: &Tensor<T>,
        g: &[T],
        buf: &mut GradBuf<T>,
    ) {
        let cols = v.len();
        let inner: T = g.iter().zip(out.data()).map(|(&a, &b)| a * b).sum();
        let inv = T::one() / sigma;
        if let Some(gw) = buf.slot(w) {
            for (i, row) in gw.chunks_mut(cols).enumerate() {
                for (j, d) in row.iter_mut().enumerate() {
                    *d += (g[i * cols + j] - inner * u[i] * v[j]) * inv;
                }
            }
        }
    }
}

fn bilinear<T: Element>(w: &[T], u: &[T], v: &[T]) -> T {
    let cols = v.len();
    w.chunks(cols)
        .zip(u)
        .map(|(row, &ui)| ui * row.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>())
        .sum()
}

fn normalize<T: Element>(x: &mut [T]) {
    let norm = x.iter().map(|&a| a * a).sum::<T>().sqrt();
    let denom = norm + T::from_f64(1e-12);
    x.iter_mut().for_each(|a| *a /= denom);
}

/// One power-iteration step estimating the largest singular value of `w`
/// (flattened to `out × rest`). Updates `u` in place and returns `(v, σ)`.
pub fn power_iteration<T: Element>(w: &Tensor<T>, u: &mut [T]) -> (Vec<T>, T) {
    let rows = w.shape()[0];
    let cols = w.numel() / rows;
    assert_eq!(u.len(), rows, "power iteration vector length");
    let data = w.data();
    let mut v = vec![T::zero(); cols];
    for (row, &ui) in data.chunks(cols).zip(u.iter()) {
        for (vj, &wij) in v.iter_mut().zip(row) {
            *vj += wij * ui;
        }
    }
    normalize(&mut v);
    for (ui, row) in u.iter_mut().zip(data.chunks(cols)) {
        *ui = row.iter().zip(&v).map(|(&a, &b)| a * b).sum();
    }
    normalize(u);
    let sigma = bilinear(data, u, &v);
    (v, sigma)
}
