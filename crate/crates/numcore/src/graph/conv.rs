use super::{GradBuf, Graph, Op, Var};
use crate::error::{dim_err, Result};
use crate::scalar::{gemm, Element, MatRef};
use crate::tensor::Tensor;

/// Geometry of a 2-D cross-correlation over a `C×H×W` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let &[c_in, h, w] = input else {
            return dim_err("conv2d", format!("expected C×H×W input, got {input:?}"));
        };
        if kernel == 0 || stride == 0 {
            return dim_err("conv2d", "kernel and stride must be at least 1");
        }
        let out = |n: usize| -> Result<usize> {
            if n + 2 * pad < kernel {
                return dim_err(
                    "conv2d",
                    format!("input extent {n} with pad {pad} is smaller than kernel {kernel}"),
                );
            }
            Ok((n + 2 * pad - kernel) / stride + 1)
        };
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kernel,
            stride,
            pad,
            h_out: out(h)?,
            w_out: out(w)?,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Visit `(col_row, col_col, input_offset)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel;
        let l = self.positions();
        for c in 0..self.c_in {
            for ki in 0..k {
                for kj in 0..k {
                    let r = (c * k + ki) * k + kj;
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let row_base = (c * self.h + iy as usize) * self.w;
                        for ox in 0..self.w_out {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(r * l, oy * self.w_out + ox, row_base + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Element>(&self, x: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.patch() * self.positions()];
        self.for_each_tap(|row, col, src| cols[row + col] = x[src]);
        cols
    }

    fn col2im<T: Element>(&self, cols: &[T], gx: &mut [T]) {
        self.for_each_tap(|row, col, dst| gx[dst] += cols[row + col]);
    }
}

impl<T: Element> Graph<T> {
    /// Zero-padded cross-correlation. `x: C_in×H×W`, `w: C_out×C_in×K×K`,
    /// optional `bias: C_out`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let &[c_out, c_in, kh, kw] = ws.as_slice() else {
            return dim_err("conv2d", format!("expected 4-d kernel, got {ws:?}"));
        };
        if kh != kw {
            return dim_err("conv2d", format!("kernel must be square, got {kh}×{kw}"));
        }
        let geom = ConvGeom::new(self.shape(x), c_out, kh, stride, pad)?;
        if geom.c_in != c_in {
            return dim_err(
                "conv2d",
                format!("input has {} channels, kernel expects {c_in}", geom.c_in),
            );
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return dim_err("conv2d", format!("bias shape {:?} != [{c_out}]", self.shape(b)));
            }
        }
        let cols = geom.im2col(self.value(x).data());
        let l = geom.positions();
        let mut out = vec![T::zero(); c_out * l];
        gemm(
            MatRef::new(self.value(w).data(), c_out, geom.patch()),
            MatRef::new(&cols, geom.patch(), l),
            &mut out,
            false,
        );
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_mut(l).zip(self.value(b).data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(&[c_out, geom.h_out, geom.w_out], out)?;
        let mut parents = vec![x, w];
        parents.extend(bias);
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                x,
                w,
                bias,
                geom,
                cols,
            },
            &parents,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: &ConvGeom,
        cols: &[T],
        g: &[T],
        buf: &mut GradBuf<T>,
    ) {
        let l = geom.positions();
        let gm = MatRef::new(g, geom.c_out, l);
        if let Some(gw) = buf.slot(w) {
            gemm(gm, MatRef::new(cols, geom.patch(), l).t(), gw, true);
        }
        if let Some(b) = bias {
            if let Some(gb) = buf.slot(b) {
                for (d, row) in gb.iter_mut().zip(g.chunks(l)) {
                    *d += row.iter().copied().sum::<T>();
                }
            }
        }
        if buf.needs[x.0] {
            let mut gcols = vec![T::zero(); geom.patch() * l];
            gemm(
                MatRef::new(self.value(w).data(), geom.c_out, geom.patch()).t(),
                gm,
                &mut gcols,
                false,
            );
            if let Some(gx) = buf.slot(x) {
                geom.col2im(&gcols, gx);
            }
        }
    }

    /// 2×2 average pooling with stride 2 over `C×H×W` (H, W even).
    pub fn avgpool2x2(&mut self, x: Var) -> Result<Var> {
        let &[c, h, w] = self.shape(x) else {
            return dim_err("avgpool2x2", format!("expected C×H×W, got {:?}", self.shape(x)));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return dim_err("avgpool2x2", format!("spatial size {h}×{w} is not even"));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let quarter = T::from_f64(0.25);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            let base = ch * h * w;
            for y in 0..ho {
                for xx in 0..wo {
                    let i = base + 2 * y * w + 2 * xx;
                    out.push((src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter);
                }
            }
        }
        let v = Tensor::new(&[c, ho, wo], out)?;
        self.push("avgpool2x2", v, Op::AvgPool2(x), &[x])
    }

    pub(super) fn avgpool_backward(&self, x: Var, g: &[T], buf: &mut GradBuf<T>) {
        let &[c, h, w] = self.shape(x) else { unreachable!() };
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        if let Some(gx) = buf.slot(x) {
            for ch in 0..c {
                for y in 0..ho {
                    for xx in 0..wo {
                        let gv = g[(ch * ho + y) * wo + xx] * quarter;
                        let i = ch * h * w + 2 * y * w + 2 * xx;
                        gx[i] += gv;
                        gx[i + 1] += gv;
                        gx[i + w] += gv;
                        gx[i + w + 1] += gv;
                    }
                }
            }
        }
    }

    /// Nearest-neighbour 2× upsampling over `C×H×W`.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let &[c, h, w] = self.shape(x) else {
            return dim_err("upsample_nearest2x", format!("expected C×H×W, got {:?}", self.shape(x)));
        };
        let src = self.value(x).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for y in 0..ho {
                let row = &src[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                for xx in 0..wo {
                    out.push(row[xx / 2]);
                }
            }
        }
        let v = Tensor::new(&[c, ho, wo], out)?;
        self.push("upsample_nearest2x", v, Op::Upsample2(x), &[x])
    }

    pub(super) fn upsample_backward(&self, x: Var, g: &[T], buf: &mut GradBuf<T>) {
        let &[c, h, w] = self.shape(x) else { unreachable!() };
        let wo = 2 * w;
        if let Some(gx) = buf.slot(x) {
            for ch in 0..c {
                for y in 0..2 * h {
                    for xx in 0..wo {
                        gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * wo + xx];
                    }
                }
            }
        }
    }

    /// Adaptive average pooling to 1×1: `C×H×W -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let &[c, h, w] = self.shape(x) else {
            return dim_err("global_avg_pool", format!("expected C×H×W, got {:?}", self.shape(x)));
        };
        let inv = T::one() / T::from_f64((h * w) as f64);
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let v = Tensor::new(&[c], data)?;
        self.push("global_avg_pool", v, Op::GlobalAvgPool(x), &[x])
    }

    pub(super) fn global_pool_backward(&self, x: Var, g: &[T], buf: &mut GradBuf<T>) {
        let &[_, h, w] = self.shape(x) else { unreachable!() };
        let inv = T::one() / T::from_f64((h * w) as f64);
        if let Some(gx) = buf.slot(x) {
            for (ch, &gv) in gx.chunks_mut(h * w).zip(g) {
                ch.iter_mut().for_each(|d| *d += gv * inv);
            }
        }
    }
}
