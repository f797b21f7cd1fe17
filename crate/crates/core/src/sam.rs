//! Multi-head cross-attention between a content map and k reference maps.

use numcore::{Element, Graph, Var};

use crate::error::{CoreError, Result};
use crate::nnblocks::{kaiming_init, FanMode};
use crate::params::{derive_seed, Bound, ParamStore};

pub const DEFAULT_HEADS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamConfig {
    pub channels: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub k: usize,
    pub height: usize,
    pub width: usize,
}

impl SamConfig {
    /// Splits `channels` evenly over `heads`.
    pub fn new(channels: usize, heads: usize, k: usize, height: usize, width: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(CoreError::Config(format!(
                "{channels} channels cannot be split over {heads} heads"
            )));
        }
        if k == 0 || height == 0 || width == 0 {
            return Err(CoreError::Config("attention geometry must be positive".into()));
        }
        Ok(Self {
            channels,
            heads,
            head_dim: channels / heads,
            k,
            height,
            width,
        })
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Parameters: per-head `q{m}`, `k{m}`, `v{m}` of shape `head_dim × channels`
    /// and `out` of shape `channels × heads·head_dim`.
    pub fn init<T: Element>(&self, prefix: &str, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        let (c, cm) = (self.channels, self.head_dim);
        for m in 0..self.heads {
            for (j, role) in ["q", "k", "v"].iter().enumerate() {
                let s = derive_seed(seed, (m * 3 + j) as u64);
                store.insert(format!("{prefix}.{role}{m}"), kaiming_init(&[cm, c], FanMode::FanIn, s), true)?;
            }
        }
        let s = derive_seed(seed, 1 << 20);
        store.insert(format!("{prefix}.out"), kaiming_init(&[c, cm * self.heads], FanMode::FanIn, s), true)?;
        Ok(())
    }
}

/// `c×h×w → c×hw`, row-major over positions.
pub fn flatten_content<T: Element>(g: &mut Graph<T>, f_c: Var) -> Result<Var> {
    let &[c, h, w] = g.shape(f_c) else {
        return Err(CoreError::Config(format!("content map must be C×H×W, got {:?}", g.shape(f_c))));
    };
    Ok(g.reshape(f_c, &[c, h * w])?)
}

/// k maps of `c×h×w` → `c×khw`, blocks in list order.
pub fn flatten_references<T: Element>(g: &mut Graph<T>, maps: &[Var]) -> Result<Var> {
    let first = maps
        .first()
        .ok_or_else(|| CoreError::Config("empty reference list".into()))?;
    let shape = g.shape(*first).to_vec();
    let mut seqs = Vec::with_capacity(maps.len());
    for &m in maps {
        if g.shape(m) != shape.as_slice() {
            return Err(CoreError::Config(format!(
                "reference maps disagree in shape: {shape:?} vs {:?}",
                g.shape(m)
            )));
        }
        seqs.push(flatten_content(g, m)?);
    }
    if seqs.len() == 1 {
        return Ok(seqs[0]);
    }
    Ok(g.concat(&seqs, 1)?)
}

pub fn project_qkv<T: Element>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    cfg: &SamConfig,
    content_seq: Var,
    reference_seq: Var,
    head: usize,
) -> Result<(Var, Var, Var)> {
    if head >= cfg.heads {
        return Err(CoreError::Config(format!("head {head} out of range for {} heads", cfg.heads)));
    }
    let wq = p.var(&format!("{prefix}.q{head}"))?;
    let wk = p.var(&format!("{prefix}.k{head}"))?;
    let wv = p.var(&format!("{prefix}.v{head}"))?;
    let q = g.matmul(wq, content_seq)?;
    let k = g.matmul(wk, reference_seq)?;
    let v = g.matmul(wv, reference_seq)?;
    Ok((q, k, v))
}

/// Scaled logits `QᵀK / √c^m`, shape `hw × khw`.
pub fn correspondence<T: Element>(g: &mut Graph<T>, q: Var, k: Var) -> Result<Var> {
    let dim = g.shape(q)[0];
    if g.shape(k)[0] != dim {
        return Err(CoreError::Config(format!(
            "query dim {dim} != key dim {}",
            g.shape(k)[0]
        )));
    }
    let qt = g.transpose(q)?;
    let a = g.matmul(qt, k)?;
    Ok(g.scale(a, 1.0 / (dim as f64).sqrt())?)
}

/// Row-softmax of the logits and the weighted values: `(weights, S = softmax(A)·Vᵀ)`.
pub fn aggregate<T: Element>(g: &mut Graph<T>, a: Var, v: Var) -> Result<(Var, Var)> {
    let weights = g.softmax_rows(a)?;
    let vt = g.transpose(v)?;
    let s = g.matmul(weights, vt)?;
    Ok((weights, s))
}

/// Concatenate head outputs (`hw × c^m` each), project with `out`, and stack
/// the result under the content channels: `2c × h × w`.
pub fn fuse<T: Element>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    cfg: &SamConfig,
    heads: &[Var],
    f_c: Var,
) -> Result<Var> {
    if heads.len() != cfg.heads {
        return Err(CoreError::Config(format!("expected {} heads, got {}", cfg.heads, heads.len())));
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat(heads, 1)? };
    let cat_t = g.transpose(cat)?;
    let ls = p.var(&format!("{prefix}.out"))?;
    let s = g.matmul(ls, cat_t)?;
    let s = g.reshape(s, &[cfg.channels, cfg.height, cfg.width])?;
    Ok(g.concat(&[f_c, s], 0)?)
}

pub struct SamOutput {
    pub fused: Var,
    /// Softmaxed attention per head, each `hw × khw`.
    pub attention: Vec<Var>,
}

pub fn sam_forward<T: Element>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    cfg: &SamConfig,
    f_c: Var,
    refs: &[Var],
) -> Result<SamOutput> {
    let expected = [cfg.channels, cfg.height, cfg.width];
    if g.shape(f_c) != expected {
        return Err(CoreError::Config(format!(
            "content map {:?} does not match attention config {expected:?}",
            g.shape(f_c)
        )));
    }
    let cs = flatten_content(g, f_c)?;
    let rs = flatten_references(g, refs)?;
    let mut outs = Vec::with_capacity(cfg.heads);
    let mut attention = Vec::with_capacity(cfg.heads);
    for m in 0..cfg.heads {
        let (q, k, v) = project_qkv(g, p, prefix, cfg, cs, rs, m)?;
        let a = correspondence(g, q, k)?;
        let (w, s) = aggregate(g, a, v)?;
        attention.push(w);
        outs.push(s);
    }
    let fused = fuse(g, p, prefix, cfg, &outs, f_c)?;
    Ok(SamOutput { fused, attention })
}

/// Attention-free stand-in: every position receives the mean reference
/// feature over all maps and positions.
pub fn mean_aggregate<T: Element>(g: &mut Graph<T>, f_c: Var, refs: &[Var]) -> Result<Var> {
    let &[c, h, w] = g.shape(f_c) else {
        return Err(CoreError::Config(format!("content map must be C×H×W, got {:?}", g.shape(f_c))));
    };
    let rs = flatten_references(g, refs)?;
    let mean = g.row_mean(rs)?;
    let s = g.broadcast_cols(mean, h * w)?;
    let s = g.reshape(s, &[c, h, w])?;
    Ok(g.concat(&[f_c, s], 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use numcore::Tensor;

    fn graph_with(shape: &[usize], data: Vec<f64>) -> (Graph<f64>, Var) {
        let mut g = Graph::checked();
        let v = g.constant(Tensor::new(shape, data).unwrap()).unwrap();
        (g, v)
    }

    #[test]
    fn flatten_shapes() {
        let (mut g, x) = graph_with(&[256, 4, 4], vec![0.5; 256 * 16]);
        let f = flatten_content(&mut g, x).unwrap();
        assert_eq!(g.shape(f), &[256, 16]);
        let r = flatten_references(&mut g, &[x, x, x]).unwrap();
        assert_eq!(g.shape(r), &[256, 48]);
        let one = flatten_references(&mut g, &[x]).unwrap();
        assert_eq!(g.value(one), g.value(f));
        assert!(flatten_references::<f64>(&mut g, &[]).is_err());
    }

    #[test]
    fn scalar_dot_product() {
        let mut g = Graph::<f64>::checked();
        let q = g.constant(Tensor::full(&[4, 1], 1.0)).unwrap();
        let k = g.constant(Tensor::full(&[4, 1], 1.0)).unwrap();
        let a = correspondence(&mut g, q, k).unwrap();
        assert_eq!(g.value(a).data(), &[2.0]);
    }

    #[test]
    fn zero_query_gives_zero_logits() {
        let mut g = Graph::<f64>::checked();
        let q = g.constant(Tensor::zeros(&[4, 3])).unwrap();
        let k = g.constant(Tensor::full(&[4, 6], 0.7)).unwrap();
        let a = correspondence(&mut g, q, k).unwrap();
        assert_eq!(g.shape(a), &[3, 6]);
        assert!(g.value(a).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn uniform_and_dominant_attention() {
        let mut g = Graph::<f64>::checked();
        let v = g
            .constant(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap())
            .unwrap();
        let a = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        let (_, s) = aggregate(&mut g, a, v).unwrap();
        assert!(g.value(s).allclose(&Tensor::from_f64(&[1, 2], &[2.0, 1.0]).unwrap(), 1e-12));
        let a = g.constant(Tensor::from_f64(&[1, 3], &[0.0, 60.0, 0.0]).unwrap()).unwrap();
        let (_, s) = aggregate(&mut g, a, v).unwrap();
        assert!(g.value(s).allclose(&Tensor::from_f64(&[1, 2], &[2.0, 0.0]).unwrap(), 1e-12));
    }

    #[test]
    fn head_split() {
        let cfg = SamConfig::new(256, 8, 3, 16, 16).unwrap();
        assert_eq!(cfg.head_dim, 32);
        assert!(SamConfig::new(10, 4, 1, 2, 2).is_err());
    }
}
