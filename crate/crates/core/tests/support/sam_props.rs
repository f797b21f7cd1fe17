//! Attention-module invariants measured on random features.

use glyphgen_core::params::ParamStore;
use glyphgen_core::sam::{aggregate, correspondence, flatten_content, flatten_references, project_qkv, sam_forward, SamConfig};
use numcore::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const C: usize = 16;
pub const HEADS: usize = 4;
pub const SIDE: usize = 4;

fn features(seed: u64, n: usize) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let data = (0..C * SIDE * SIDE).map(|_| rng.random_range(0.0..1.0)).collect();
            Tensor::new(&[C, SIDE, SIDE], data).unwrap()
        })
        .collect()
}

fn params(seed: u64) -> ParamStore<f64> {
    let cfg = SamConfig::new(C, HEADS, 3, SIDE, SIDE).unwrap();
    let mut s = ParamStore::new();
    cfg.init("sam", &mut s, seed).unwrap();
    s
}

fn fused(store: &ParamStore<f64>, f_c: &Tensor<f64>, refs: &[Tensor<f64>]) -> (Tensor<f64>, Vec<Tensor<f64>>) {
    let cfg = SamConfig::new(C, HEADS, refs.len(), SIDE, SIDE).unwrap();
    let mut g = Graph::checked();
    let p = store.bind(&mut g, false).unwrap();
    let c = g.constant(f_c.clone()).unwrap();
    let rs: Vec<_> = refs.iter().map(|r| g.constant(r.clone()).unwrap()).collect();
    let out = sam_forward(&mut g, &p, "sam", &cfg, c, &rs).unwrap();
    (g.value(out.fused).clone(), out.attention.iter().map(|&a| g.value(a).clone()).collect())
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest `|Σ_j A_ij − 1|` over heads and rows.
pub fn row_sum_error(seed: u64) -> f64 {
    let f = features(seed, 4);
    let (_, att) = fused(&params(seed), &f[0], &f[1..]);
    att.iter()
        .flat_map(|a| {
            let cols = a.shape()[1];
            a.data().chunks(cols).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Output change when the three references are listed in reverse.
pub fn permutation_error(seed: u64) -> f64 {
    let f = features(seed, 4);
    let p = params(seed);
    let (a, _) = fused(&p, &f[0], &[f[1].clone(), f[2].clone(), f[3].clone()]);
    let (b, _) = fused(&p, &f[0], &[f[3].clone(), f[1].clone(), f[2].clone()]);
    max_diff(&a, &b)
}

/// Output change when every reference appears twice.
pub fn duplication_error(seed: u64) -> f64 {
    let f = features(seed, 4);
    let p = params(seed);
    let (a, _) = fused(&p, &f[0], &f[1..]);
    let doubled: Vec<_> = f[1..].iter().flat_map(|r| [r.clone(), r.clone()]).collect();
    let (b, _) = fused(&p, &f[0], &doubled);
    max_diff(&a, &b)
}

/// Largest violation of "each aggregated row lies in the convex hull of the
/// value columns": weights must be non-negative, sum to one and reproduce
/// the row, and each coordinate must sit within the columns' range.
pub fn convex_hull_violation(seed: u64) -> f64 {
    let f = features(seed, 4);
    let store = params(seed);
    let cfg = SamConfig::new(C, HEADS, 3, SIDE, SIDE).unwrap();
    let mut g = Graph::checked();
    let p = store.bind(&mut g, false).unwrap();
    let c = g.constant(f[0].clone()).unwrap();
    let rs: Vec<_> = f[1..].iter().map(|r| g.constant(r.clone()).unwrap()).collect();
    let cs = flatten_content(&mut g, c).unwrap();
    let rseq = flatten_references(&mut g, &rs).unwrap();
    let mut worst = 0.0f64;
    for m in 0..HEADS {
        let (q, k, v) = project_qkv(&mut g, &p, "sam", &cfg, cs, rseq, m).unwrap();
        let a = correspondence(&mut g, q, k).unwrap();
        let (w, s) = aggregate(&mut g, a, v).unwrap();
        let (w, s, v) = (g.value(w), g.value(s), g.value(v));
        let (dim, n) = (v.shape()[0], v.shape()[1]);
        for (row, srow) in w.data().chunks(n).zip(s.data().chunks(dim)) {
            worst = worst.max(row.iter().map(|&x| (-x).max(0.0)).fold(0.0, f64::max));
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            for (d, &sv) in srow.iter().enumerate() {
                let col = &v.data()[d * n..(d + 1) * n];
                let recon: f64 = row.iter().zip(col).map(|(a, b)| a * b).sum();
                worst = worst.max((recon - sv).abs());
                let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
                worst = worst.max(lo - sv).max(sv - hi);
            }
        }
    }
    worst
}
