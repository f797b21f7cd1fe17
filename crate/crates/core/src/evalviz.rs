//! Image metrics, attention-map extraction and the localization probe.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use numcore::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::fontnet::{FontModel, FEATURE_STRIDE};
use crate::glyphsynth::{save_gray_rect, to_u8, Dataset};
use crate::params::derive_seed;
use crate::trainer::{TrainConfig, Trainer};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::Data(format!("images differ in size: {} vs {} pixels", a.len(), b.len())));
    }
    Ok(())
}

/// `(mean |a − b|, sqrt(mean (a − b)²))`.
pub fn pixel_metrics(a: &[f32], b: &[f32]) -> Result<(f64, f64)> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let (mut l1, mut l2) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        l1 += d.abs();
        l2 += d * d;
    }
    Ok((l1 / n, (l2 / n).sqrt()))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|x| x / s).collect()
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows, dynamic range 1.
pub fn ssim(a: &[f32], b: &[f32], size: usize) -> Result<f64> {
    check_pair(a, b)?;
    if a.len() != size * size {
        return Err(CoreError::Data(format!("{} pixels is not a {size}×{size} image", a.len())));
    }
    if size < SSIM_WINDOW {
        return Err(CoreError::Data(format!("image {size}×{size} is smaller than the {SSIM_WINDOW}-pixel window")));
    }
    let w = gaussian_window();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let at = |img: &[f32], y: usize, x: usize| img[y * size + x] as f64;
    let out = size - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for oy in 0..out {
        for ox in 0..out {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, wy) in w.iter().enumerate() {
                for (j, wx) in w.iter().enumerate() {
                    let k = wy * wx;
                    let (x, y) = (at(a, oy + i, ox + j), at(b, oy + i, ox + j));
                    ma += k * x;
                    mb += k * y;
                    saa += k * x * x;
                    sbb += k * y * y;
                    sab += k * x * y;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (out * out) as f64)
}

/// Content-map positions whose attention rows are summed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionProbe {
    pub queries: Vec<(usize, usize)>,
    /// `None` sums over heads.
    pub head: Option<usize>,
}

impl AttentionProbe {
    pub fn granular(y: usize, x: usize) -> Self {
        Self {
            queries: vec![(y, x)],
            head: None,
        }
    }

    /// Points along the segment between two cells (inclusive).
    pub fn stroke(from: (usize, usize), to: (usize, usize)) -> Self {
        let steps = from.0.abs_diff(to.0).max(from.1.abs_diff(to.1));
        let lerp = |a: usize, b: usize, t: f64| (a as f64 + (b as f64 - a as f64) * t).round() as usize;
        let mut queries: Vec<(usize, usize)> = (0..=steps)
            .map(|i| {
                let t = if steps == 0 { 0.0 } else { i as f64 / steps as f64 };
                (lerp(from.0, to.0, t), lerp(from.1, to.1, t))
            })
            .collect();
        queries.dedup();
        Self { queries, head: None }
    }

    /// Every cell of the box `[y0, y1) × [x0, x1)`.
    pub fn component(y0: usize, y1: usize, x0: usize, x1: usize) -> Self {
        Self {
            queries: (y0..y1).flat_map(|y| (x0..x1).map(move |x| (y, x))).collect(),
            head: None,
        }
    }

    pub fn with_head(mut self, head: usize) -> Self {
        self.head = Some(head);
        self
    }
}

/// Sum the probed attention rows and lay the `k` reference blocks side by
/// side: entry `(y, r·w + x)` is the weight on position `(y, x)` of
/// reference `r`. Input maps are `hw × khw` per head.
pub fn attention_map(heads: &[Tensor<f32>], h: usize, w: usize, probe: &AttentionProbe) -> Result<Tensor<f64>> {
    let first = heads
        .first()
        .ok_or_else(|| CoreError::Data("no attention maps (was SAM disabled?)".into()))?;
    let hw = h * w;
    if first.shape().len() != 2 || first.shape()[0] != hw || first.shape()[1] % hw != 0 {
        return Err(CoreError::Data(format!(
            "attention of shape {:?} does not fit a {h}×{w} content map",
            first.shape()
        )));
    }
    let kw = first.shape()[1] / hw;
    let chosen: Vec<&Tensor<f32>> = match probe.head {
        Some(m) if m >= heads.len() => {
            return Err(CoreError::Data(format!("head {m} out of range for {} heads", heads.len())))
        }
        Some(m) => vec![&heads[m]],
        None => heads.iter().collect(),
    };
    if probe.queries.is_empty() {
        return Err(CoreError::Data("attention probe has no query positions".into()));
    }
    let cols = kw * hw;
    let mut out = vec![0.0f64; h * kw * w];
    for &(qy, qx) in &probe.queries {
        if qy >= h || qx >= w {
            return Err(CoreError::Data(format!("probe position ({qy}, {qx}) outside {h}×{w}")));
        }
        let q = qy * w + qx;
        for a in &chosen {
            let row = &a.data()[q * cols..(q + 1) * cols];
            for (j, &v) in row.iter().enumerate() {
                let (r, pos) = (j / hw, j % hw);
                let (y, x) = (pos / w, pos % w);
                out[y * kw * w + r * w + x] += v as f64;
            }
        }
    }
    Ok(Tensor::new(&[h, kw * w], out)?)
}

/// Majority ink label per `factor×factor` cell; background only where the
/// cell has no ink. Ties go to the smaller label.
pub fn downsample_mask(mask: &[u8], size: usize, factor: usize) -> Result<Vec<u8>> {
    if factor == 0 || !size.is_multiple_of(factor) || mask.len() != size * size {
        return Err(CoreError::Data(format!("cannot pool a {size}×{size} mask by {factor}")));
    }
    let n = size / factor;
    let mut out = vec![0u8; n * n];
    for cy in 0..n {
        for cx in 0..n {
            let mut counts = [0u32; 256];
            for y in cy * factor..(cy + 1) * factor {
                for x in cx * factor..(cx + 1) * factor {
                    counts[mask[y * size + x] as usize] += 1;
                }
            }
            let best = (1..256).max_by_key(|&l| (counts[l], std::cmp::Reverse(l))).unwrap();
            out[cy * n + cx] = if counts[best] > 0 { best as u8 } else { 0 };
        }
    }
    Ok(out)
}

/// Share of the map's mass on reference cells labelled `label`.
/// `ref_masks` are the downsampled reference masks in map order.
pub fn localization_score(map: &Tensor<f64>, ref_masks: &[Vec<u8>], w: usize, label: u8) -> Result<f64> {
    let &[h, kw] = map.shape() else {
        return Err(CoreError::Data(format!("attention map must be 2-d, got {:?}", map.shape())));
    };
    if ref_masks.len() * w != kw || ref_masks.iter().any(|m| m.len() != h * w) {
        return Err(CoreError::Data("reference masks do not match the attention map".into()));
    }
    if label == 0 || !ref_masks.iter().any(|m| m.contains(&label)) {
        return Err(CoreError::Data(format!("component label {label} does not occur in the references")));
    }
    let (mut hit, mut total) = (0.0, 0.0);
    for y in 0..h {
        for col in 0..kw {
            let v = map.data()[y * kw + col];
            total += v;
            if ref_masks[col / w][y * w + col % w] == label {
                hit += v;
            }
        }
    }
    Ok(if total > 0.0 { hit / total } else { 0.0 })
}

/// Score under uniform attention: the label's share of reference cells.
pub fn uniform_baseline(ref_masks: &[Vec<u8>], label: u8) -> f64 {
    let cells: usize = ref_masks.iter().map(|m| m.len()).sum();
    let hits = ref_masks.iter().flatten().filter(|&&l| l == label).count();
    hits as f64 / cells.max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub style: String,
    pub content: String,
    pub label: u8,
    pub score: f64,
    pub baseline: f64,
}

/// One component-level probe per (pair, atom label) where the label occupies
/// at least one content cell and at least one reference cell.
pub fn component_probes(
    model: &FontModel<f32>,
    cfg: &TrainConfig,
    data: &Dataset,
    pairs: &[(usize, usize)],
) -> Result<Vec<ProbeResult>> {
    let size = data.size;
    let n = size / FEATURE_STRIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x10CA));
    let mut out = Vec::new();
    for &(s, c) in pairs {
        let refs = Trainer::pick_refs(data, cfg.use_rs, cfg.k, c, &mut rng)?;
        let item = Trainer::item(data, s, c, &refs);
        let inf = model.infer(&item.content_image, &item.refs, cfg.use_sam)?;
        let content_mask = downsample_mask(&data.content_image(c).mask, size, FEATURE_STRIDE)?;
        let ref_masks = refs
            .iter()
            .map(|&r| downsample_mask(&data.glyph(s, r).mask, size, FEATURE_STRIDE))
            .collect::<Result<Vec<_>>>()?;
        let mut labels: Vec<u8> = content_mask.iter().copied().filter(|&l| l != 0).collect();
        labels.sort_unstable();
        labels.dedup();
        for label in labels {
            if !ref_masks.iter().any(|m| m.contains(&label)) {
                continue;
            }
            let queries = (0..n * n)
                .filter(|&i| content_mask[i] == label)
                .map(|i| (i / n, i % n))
                .collect();
            let map = attention_map(&inf.attention, n, n, &AttentionProbe { queries, head: None })?;
            out.push(ProbeResult {
                style: data.styles[s].id.clone(),
                content: data.chars[c].clone(),
                label,
                score: localization_score(&map, &ref_masks, n, label)?,
                baseline: uniform_baseline(&ref_masks, label),
            });
        }
    }
    Ok(out)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub style: String,
    pub content: String,
    pub split: String,
    pub l1: f64,
    pub rmse: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

impl MetricReport {
    /// `(split → [(mean, std) of l1, rmse, ssim])`.
    pub fn aggregates(&self) -> BTreeMap<String, [(f64, f64); 3]> {
        let mut by: BTreeMap<String, [Vec<f64>; 3]> = BTreeMap::new();
        for r in &self.rows {
            let e = by.entry(r.split.clone()).or_default();
            e[0].push(r.l1);
            e[1].push(r.rmse);
            e[2].push(r.ssim);
        }
        by.into_iter()
            .map(|(k, v)| (k, [mean_std(&v[0]), mean_std(&v[1]), mean_std(&v[2])]))
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("style\tcontent\tsplit\tl1\trmse\tssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}", r.style, r.content, r.split, r.l1, r.rmse, r.ssim);
        }
        for (split, [l1, rmse, ss]) in self.aggregates() {
            let _ = writeln!(
                s,
                "#mean±std\t*\t{split}\t{:.6}±{:.6}\t{:.6}±{:.6}\t{:.6}±{:.6}",
                l1.0, l1.1, rmse.0, rmse.1, ss.0, ss.1
            );
        }
        s
    }
}

pub fn split_name(data: &Dataset, s: usize, c: usize) -> &'static str {
    match (data.styles[s].seen, data.is_seen_char(c)) {
        (true, true) => "train",
        (true, false) => "SFUC",
        (false, true) => "UFSC",
        (false, false) => "UFUC",
    }
}

/// Generate every pair and score it against the ground truth.
pub fn evaluate_pairs(
    model: &FontModel<f32>,
    cfg: &TrainConfig,
    data: &Dataset,
    pairs: &[(usize, usize)],
) -> Result<MetricReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xE7A1));
    let mut report = MetricReport::default();
    for &(s, c) in pairs {
        let refs = Trainer::pick_refs(data, cfg.use_rs, cfg.k, c, &mut rng)?;
        let item = Trainer::item(data, s, c, &refs);
        let out = model.infer(&item.content_image, &item.refs, cfg.use_sam)?;
        let (a, b) = (out.image.data(), item.target.data());
        let (l1, rmse) = pixel_metrics(a, b)?;
        report.rows.push(MetricRow {
            style: data.styles[s].id.clone(),
            content: data.chars[c].clone(),
            split: split_name(data, s, c).to_string(),
            l1,
            rmse,
            ssim: ssim(a, b, data.size)?,
        });
    }
    Ok(report)
}

/// 8-bit view of a map scaled by its own maximum.
pub fn map_to_bytes(map: &Tensor<f64>) -> Vec<u8> {
    let max = map.data().iter().copied().fold(0.0f64, f64::max);
    map.data()
        .iter()
        .map(|&v| if max > 0.0 { to_u8(v / max) } else { 0 })
        .collect()
}

pub fn save_map_png(path: &Path, map: &Tensor<f64>) -> Result<()> {
    let &[h, w] = map.shape() else {
        return Err(CoreError::Data("attention map must be 2-d".into()));
    };
    save_gray_rect(path, w, h, &map_to_bytes(map))
}

/// Raw values, one map row per line.
pub fn map_to_tsv(map: &Tensor<f64>) -> String {
    let w = map.shape()[1];
    map.data()
        .chunks(w)
        .map(|row| row.iter().map(|v| format!("{v:.9}")).collect::<Vec<_>>().join("\t") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(h: usize, w: usize, k: usize) -> Tensor<f32> {
        let cols = k * h * w;
        Tensor::new(&[h * w, cols], vec![1.0 / cols as f32; h * w * cols]).unwrap()
    }

    #[test]
    fn constant_offset_metrics() {
        let a = vec![0.2f32; 64];
        let b = vec![0.7f32; 64];
        let (l1, rmse) = pixel_metrics(&a, &b).unwrap();
        assert!((l1 - 0.5).abs() < 1e-7 && (rmse - 0.5).abs() < 1e-7);
        assert_eq!(pixel_metrics(&a, &a).unwrap(), (0.0, 0.0));
        assert!(pixel_metrics(&a, &b[..10]).is_err());
    }

    #[test]
    fn ssim_identity_inverse_and_symmetry() {
        let size = 16;
        let a: Vec<f32> = (0..size * size).map(|i| if (i / size + i % size) % 5 < 2 { 1.0 } else { 0.0 }).collect();
        let inv: Vec<f32> = a.iter().map(|x| 1.0 - x).collect();
        assert_eq!(ssim(&a, &a, size).unwrap(), 1.0);
        assert!(ssim(&a, &inv, size).unwrap() < 0.0);
        let b: Vec<f32> = a.iter().enumerate().map(|(i, x)| x * 0.8 + (i % 7) as f32 * 0.02).collect();
        assert!((ssim(&a, &b, size).unwrap() - ssim(&b, &a, size).unwrap()).abs() < 1e-12);
        assert!(ssim(&a[..100], &a[..100], 10).is_err());
    }

    #[test]
    fn uniform_map_is_constant_and_additive() {
        let (h, w, k) = (4, 4, 3);
        let heads = vec![uniform(h, w, k)];
        let m = attention_map(&heads, h, w, &AttentionProbe::granular(1, 2)).unwrap();
        assert_eq!(m.shape(), &[4, 12]);
        for &v in m.data() {
            assert!((v - 1.0 / 48.0).abs() < 1e-7);
        }
        let s = attention_map(&heads, h, w, &AttentionProbe::component(0, 2, 0, 3)).unwrap();
        assert!((s.data().iter().sum::<f64>() - 6.0).abs() < 1e-5);
        assert!(attention_map(&heads, h, w, &AttentionProbe::granular(4, 0)).is_err());
        assert!(attention_map(&heads, h, w, &AttentionProbe::granular(0, 0).with_head(1)).is_err());
    }

    #[test]
    fn blocks_lie_side_by_side() {
        let (h, w, k) = (2, 2, 2);
        let mut a = vec![0f32; h * w * k * h * w];
        // query 0 attends to reference 1, position (1, 0)
        a[4 + 2] = 1.0;
        let m = attention_map(&[Tensor::new(&[4, 8], a).unwrap()], h, w, &AttentionProbe::granular(0, 0)).unwrap();
        assert_eq!(m.data()[4 + 2], 1.0);
        assert_eq!(m.data().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn stroke_probe_walks_the_segment() {
        let p = AttentionProbe::stroke((0, 0), (3, 3));
        assert_eq!(p.queries, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn mask_majority_ignores_background() {
        let mut m = vec![0u8; 16];
        m[0] = 3;
        m[5] = 2;
        m[6] = 2;
        m[10] = 3;
        let d = downsample_mask(&m, 4, 2).unwrap();
        assert_eq!(d, vec![2, 2, 0, 3]);
    }

    #[test]
    fn localization_bounds_and_baseline() {
        let (h, w, k) = (2, 2, 2);
        let masks = vec![vec![1, 0, 0, 2], vec![1, 1, 0, 0]];
        let heads = vec![uniform(h, w, k)];
        let m = attention_map(&heads, h, w, &AttentionProbe::granular(0, 0)).unwrap();
        let score = localization_score(&m, &masks, w, 1).unwrap();
        assert!((score - uniform_baseline(&masks, 1)).abs() < 1e-7);
        assert!((score - 3.0 / 8.0).abs() < 1e-7);
        let mut a = vec![0f32; 4 * 8];
        a[0] = 1.0;
        let m = attention_map(&[Tensor::new(&[4, 8], a).unwrap()], h, w, &AttentionProbe::granular(0, 0)).unwrap();
        assert_eq!(localization_score(&m, &masks, w, 1).unwrap(), 1.0);
        assert!(localization_score(&m, &masks, w, 7).is_err());
    }

    #[test]
    fn median_and_spread() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
