//! Procedural compositional glyphs: components drawn as stroke sets, laid out
//! by structure operator, rendered under parametric styles.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::FRAC_PI_4;
use std::fmt::Write as _;
use std::path::Path;

use glyph_decomp::{DecompositionTable, ReferenceMapping, StructureOp};
use numcore::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};
use crate::params::derive_seed;

/// Pixel sizes the renderer is tuned for.
pub const SUPPORTED_SIZES: [usize; 3] = [32, 64, 128];
const SUPERSAMPLE: usize = 2;
pub const NEUTRAL_STYLE: &str = "neutral";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    /// Stroke width in pixels at 32×32; scaled with the canvas.
    pub stroke_width: f64,
    /// Shear angle in radians, positive leans right.
    pub slant: f64,
    /// Corner rounding as a fraction of the component cell.
    pub corner_radius: f64,
    pub ink_level: f64,
    pub jitter_seed: u64,
    /// Control-point displacement as a fraction of the component cell. Each
    /// component gets its own displacement and width factor per style.
    pub jitter_amp: f64,
}

impl StyleParams {
    /// The content font: thin, upright, unjittered.
    pub fn neutral() -> Self {
        Self {
            stroke_width: 1.5,
            slant: 0.0,
            corner_radius: 0.0,
            ink_level: 1.0,
            jitter_seed: 0,
            jitter_amp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.stroke_width >= 1.0
            && self.slant.abs() < FRAC_PI_4
            && self.corner_radius >= 0.0
            && self.ink_level > 0.0
            && self.ink_level <= 1.0
            && self.jitter_amp >= 0.0
            && [self.stroke_width, self.slant, self.corner_radius, self.jitter_amp].iter().all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(CoreError::Data(format!("invalid style parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedStyle {
    pub id: String,
    pub params: StyleParams,
    pub seen: bool,
}

/// `n` styles `s0..`, the first `n_seen` marked as training styles.
pub fn style_bank(n: usize, n_seen: usize, seed: u64) -> Vec<NamedStyle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| NamedStyle {
            id: format!("s{i}"),
            params: StyleParams {
                stroke_width: rng.random_range(1.2..3.2),
                slant: rng.random_range(-0.3..0.3),
                corner_radius: rng.random_range(0.0..0.12),
                ink_level: rng.random_range(0.75..1.0),
                jitter_seed: rng.random(),
                jitter_amp: rng.random_range(0.04..0.12),
            },
            seen: i < n_seen,
        })
        .collect()
}

/// Polylines in unit-cell coordinates (y down).
fn primitive(atom: &str) -> Vec<Vec<(f64, f64)>> {
    let rect = |x0: f64, y0: f64, x1: f64, y1: f64| vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)];
    match atom {
        "heng" => vec![vec![(0.1, 0.5), (0.9, 0.5)]],
        "shu" => vec![vec![(0.5, 0.1), (0.5, 0.9)]],
        "kou" => vec![rect(0.2, 0.2, 0.8, 0.8)],
        "ri" => vec![rect(0.25, 0.1, 0.75, 0.9), vec![(0.25, 0.5), (0.75, 0.5)]],
        "yuan" => vec![(0..=12)
            .map(|i| {
                let t = i as f64 / 12.0 * std::f64::consts::TAU;
                (0.5 + 0.33 * t.cos(), 0.5 + 0.33 * t.sin())
            })
            .collect()],
        "cha" => vec![vec![(0.15, 0.15), (0.85, 0.85)], vec![(0.85, 0.15), (0.15, 0.85)]],
        "shi" => vec![vec![(0.1, 0.45), (0.9, 0.45)], vec![(0.5, 0.1), (0.5, 0.9)]],
        "dian" => vec![vec![(0.4, 0.3), (0.6, 0.6)]],
        "gou" => vec![vec![(0.55, 0.1), (0.55, 0.8), (0.3, 0.65)]],
        "bo" => vec![vec![(0.2, 0.15), (0.5, 0.5), (0.9, 0.85)]],
        "san" => vec![
            vec![(0.3, 0.15), (0.45, 0.25)],
            vec![(0.25, 0.45), (0.4, 0.55)],
            vec![(0.2, 0.9), (0.45, 0.65)],
        ],
        "men" => vec![
            vec![(0.15, 0.9), (0.15, 0.1), (0.85, 0.1), (0.85, 0.9)],
            vec![(0.3, 0.02), (0.4, 0.1)],
        ],
        other => hashed_primitive(other),
    }
}

/// Two or three strokes derived from the component name.
fn hashed_primitive(name: &str) -> Vec<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(name_hash(name));
    let n = rng.random_range(2..=3);
    (0..n)
        .map(|_| (0..rng.random_range(2..=3)).map(|_| (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9))).collect())
        .collect()
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn unit(seed: u64) -> f64 {
    (seed >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Cell {
    fn w(&self) -> f64 {
        self.x1 - self.x0
    }

    fn h(&self) -> f64 {
        self.y1 - self.y0
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Atom placements in drawing order.
fn layout(table: &DecompositionTable, name: &str, cell: Cell, out: &mut Vec<(String, Cell)>) {
    let children = table.children_of(name);
    let op = table.op_of(name).unwrap_or(StructureOp::Atom);
    if children.is_empty() {
        out.push((name.to_string(), cell));
        return;
    }
    let n = children.len() as f64;
    match op {
        StructureOp::LeftRight => {
            for (i, c) in children.iter().enumerate() {
                let x0 = cell.x0 + cell.w() * i as f64 / n;
                let x1 = cell.x0 + cell.w() * (i + 1) as f64 / n;
                layout(table, c, Cell { x0, x1, ..cell }, out);
            }
        }
        StructureOp::TopBottom => {
            for (i, c) in children.iter().enumerate() {
                let y0 = cell.y0 + cell.h() * i as f64 / n;
                let y1 = cell.y0 + cell.h() * (i + 1) as f64 / n;
                layout(table, c, Cell { y0, y1, ..cell }, out);
            }
        }
        StructureOp::Enclosure => {
            layout(table, &children[0], cell, out);
            let inner = Cell {
                x0: cell.x0 + 0.28 * cell.w(),
                x1: cell.x1 - 0.28 * cell.w(),
                y0: cell.y0 + 0.28 * cell.h(),
                y1: cell.y1 - 0.28 * cell.h(),
            };
            for c in &children[1..] {
                layout(table, c, inner, out);
            }
        }
        StructureOp::Other | StructureOp::Atom => {
            for c in children {
                layout(table, c, cell, out);
            }
        }
    }
}

struct Stroke {
    label: u8,
    clip: Cell,
    points: Vec<(f64, f64)>,
    half_width: f64,
}

fn round_corners(points: &[(f64, f64)], radius: f64) -> Vec<(f64, f64)> {
    if radius <= 0.0 || points.len() < 3 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    for w in points.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let la = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let lc = ((c.0 - b.0).powi(2) + (c.1 - b.1).powi(2)).sqrt();
        let r = radius.min(la / 2.0).min(lc / 2.0);
        if r <= 1e-9 {
            out.push(b);
            continue;
        }
        let p = (b.0 + (a.0 - b.0) * r / la, b.1 + (a.1 - b.1) * r / la);
        let q = (b.0 + (c.0 - b.0) * r / lc, b.1 + (c.1 - b.1) * r / lc);
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let u = 1.0 - t;
            out.push((
                u * u * p.0 + 2.0 * u * t * b.0 + t * t * q.0,
                u * u * p.1 + 2.0 * u * t * b.1 + t * t * q.1,
            ));
        }
    }
    out.push(*points.last().unwrap());
    out
}

fn strokes_for(
    table: &DecompositionTable,
    glyph: &str,
    style: &StyleParams,
    size: usize,
    labels: &BTreeMap<String, u8>,
) -> Vec<Stroke> {
    let canvas = Cell {
        x0: 0.0,
        y0: 0.0,
        x1: size as f64,
        y1: size as f64,
    };
    let mut placed = Vec::new();
    layout(table, glyph, canvas, &mut placed);
    let scale = size as f64 / 32.0;
    let shear = style.slant.tan();
    let mut strokes = Vec::new();
    for (atom, cell) in placed {
        let label = labels.get(&atom).copied().unwrap_or(0);
        let atom_seed = derive_seed(style.jitter_seed, name_hash(&atom));
        let width_factor = 1.0 + (4.0 * style.jitter_amp).min(0.5) * (2.0 * unit(derive_seed(atom_seed, 7)) - 1.0);
        let half_width = 0.5 * style.stroke_width * width_factor * scale;
        let cy = 0.5 * (cell.y0 + cell.y1);
        for (si, poly) in primitive(&atom).into_iter().enumerate() {
            let pts: Vec<(f64, f64)> = poly
                .iter()
                .enumerate()
                .map(|(pi, &(u, v))| {
                    let salt = derive_seed(atom_seed, ((si as u64) << 16) | pi as u64);
                    let du = style.jitter_amp * (2.0 * unit(derive_seed(salt, 1)) - 1.0);
                    let dv = style.jitter_amp * (2.0 * unit(derive_seed(salt, 2)) - 1.0);
                    let x = cell.x0 + (u + du) * cell.w();
                    let y = cell.y0 + (v + dv) * cell.h();
                    (x + shear * (cy - y), y)
                })
                .collect();
            let radius = style.corner_radius * cell.w().min(cell.h());
            strokes.push(Stroke {
                label,
                clip: cell,
                points: round_corners(&pts, radius),
                half_width,
            });
        }
    }
    strokes
}

fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (x, y) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    x * x + y * y
}

/// One rendered glyph. Ink is 1, background 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphImage {
    pub size: usize,
    pub pixels: Vec<f32>,
    /// Per-pixel component label (0 = background).
    pub mask: Vec<u8>,
    pub content_id: String,
    pub style_id: String,
}

impl GlyphImage {
    pub fn tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::new(&[1, self.size, self.size], self.pixels.iter().map(|&p| T::from_f64(p as f64)).collect())
            .expect("square image")
    }

    pub fn ink_fraction(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| to_u8(p as f64)).collect()
    }
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn render_glyph(
    table: &DecompositionTable,
    glyph: &str,
    style_id: &str,
    style: &StyleParams,
    size: usize,
) -> Result<GlyphImage> {
    if !table.contains(glyph) {
        return Err(glyph_decomp::DecompError::UnknownGlyph(glyph.to_string()).into());
    }
    if !SUPPORTED_SIZES.contains(&size) {
        return Err(CoreError::Data(format!("unsupported glyph size {size}; use 32, 64 or 128")));
    }
    style.validate()?;
    let labels = table.atom_labels();
    let n_labels = labels.len() + 1;
    let strokes = strokes_for(table, glyph, style, size, &labels);
    let mut pixels = vec![0f32; size * size];
    let mut mask = vec![0u8; size * size];
    let mut counts = vec![0u32; n_labels];
    let step = 1.0 / SUPERSAMPLE as f64;
    for py in 0..size {
        for px in 0..size {
            counts.iter_mut().for_each(|c| *c = 0);
            let mut covered = 0u32;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let p = (px as f64 + (sx as f64 + 0.5) * step, py as f64 + (sy as f64 + 0.5) * step);
                    let mut hit: Option<u8> = None;
                    for s in &strokes {
                        if !s.clip.contains(p.0, p.1) {
                            continue;
                        }
                        let r2 = s.half_width * s.half_width;
                        if s.points.windows(2).any(|w| seg_dist2(p, w[0], w[1]) <= r2) {
                            hit = Some(s.label);
                        }
                    }
                    if let Some(l) = hit {
                        covered += 1;
                        counts[l as usize] += 1;
                    }
                }
            }
            if covered > 0 {
                let i = py * size + px;
                let v = style.ink_level * covered as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                pixels[i] = to_u8(v) as f32 / 255.0;
                // most-covering component; later labels win ties
                let (best, _) = counts.iter().enumerate().rev().max_by_key(|(_, &c)| c).unwrap();
                mask[i] = best as u8;
            }
        }
    }
    // a faint pixel can quantize to zero; keep ink and mask in agreement
    for (p, m) in pixels.iter().zip(mask.iter_mut()) {
        if *p == 0.0 {
            *m = 0;
        }
    }
    Ok(GlyphImage {
        size,
        pixels,
        mask,
        content_id: glyph.to_string(),
        style_id: style_id.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetInfo {
    size: usize,
    k: usize,
    seed: u64,
    chars: Vec<String>,
    unseen_chars: Vec<String>,
    references: Vec<String>,
}

/// A (style, content) training or evaluation pair with its reference list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub style: usize,
    pub content: usize,
    pub refs: Vec<usize>,
}

/// Rendered images for every style × character plus the neutral content font.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub size: usize,
    pub k: usize,
    pub seed: u64,
    pub table: DecompositionTable,
    pub chars: Vec<String>,
    pub styles: Vec<NamedStyle>,
    pub unseen_chars: BTreeSet<String>,
    pub references: Vec<String>,
    pub mapping: ReferenceMapping,
    content: Vec<GlyphImage>,
    glyphs: Vec<Vec<GlyphImage>>,
    index: HashMap<String, usize>,
}

/// Render all pairs. `unseen` characters are held out of training; the
/// reference glyphs must be training characters.
#[allow(clippy::too_many_arguments)]
pub fn make_dataset(
    table: &DecompositionTable,
    styles: &[NamedStyle],
    contents: &[String],
    unseen: &BTreeSet<String>,
    references: &[String],
    mapping: &ReferenceMapping,
    size: usize,
    seed: u64,
) -> Result<Dataset> {
    if styles.is_empty() || contents.is_empty() {
        return Err(CoreError::Data("dataset needs at least one style and one character".into()));
    }
    let index: HashMap<String, usize> = contents.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
    for c in contents {
        let refs = mapping
            .get(c)
            .ok_or_else(|| CoreError::Data(format!("reference mapping has no entry for `{c}`")))?;
        for r in refs {
            if !index.contains_key(r) {
                return Err(CoreError::Data(format!("reference `{r}` for `{c}` is not a dataset character")));
            }
        }
    }
    for r in references {
        if unseen.contains(r) || !index.contains_key(r) {
            return Err(CoreError::Data(format!("reference `{r}` must be a training character")));
        }
    }
    let neutral = StyleParams::neutral();
    let content = contents
        .iter()
        .map(|c| render_glyph(table, c, NEUTRAL_STYLE, &neutral, size))
        .collect::<Result<Vec<_>>>()?;
    let glyphs = styles
        .iter()
        .map(|s| {
            contents
                .iter()
                .map(|c| render_glyph(table, c, &s.id, &s.params, size))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        size,
        k: mapping.k(),
        seed,
        table: table.clone(),
        chars: contents.to_vec(),
        styles: styles.to_vec(),
        unseen_chars: unseen.clone(),
        references: references.to_vec(),
        mapping: mapping.clone(),
        content,
        glyphs,
        index,
    })
}

/// Recipe for the standard desk dataset built from a decomposition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub size: usize,
    pub styles: usize,
    pub seen_styles: usize,
    /// The last this-many composite glyphs of the table are held out.
    pub unseen_chars: usize,
    pub k: usize,
    pub ref_capacity: usize,
    pub min_new: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            size: 32,
            styles: 8,
            seen_styles: 6,
            unseen_chars: 8,
            k: glyph_decomp::DEFAULT_SHOTS,
            ref_capacity: 10,
            min_new: glyph_decomp::DEFAULT_MIN_NEW,
            seed: 0,
        }
    }
}

/// Split characters, pick the reference set among training characters, map
/// every character to `k` references and render everything.
pub fn build_dataset(table: &DecompositionTable, spec: &DatasetSpec) -> Result<Dataset> {
    if !SUPPORTED_SIZES.contains(&spec.size) {
        return Err(CoreError::Config(format!("image size {} not in {SUPPORTED_SIZES:?}", spec.size)));
    }
    if spec.seen_styles == 0 || spec.seen_styles > spec.styles {
        return Err(CoreError::Config("need 1 ≤ seen styles ≤ styles".into()));
    }
    let chars = table.composite_glyphs();
    if spec.unseen_chars >= chars.len() {
        return Err(CoreError::Config(format!(
            "cannot hold out {} of {} characters",
            spec.unseen_chars,
            chars.len()
        )));
    }
    let split = chars.len() - spec.unseen_chars;
    let unseen: BTreeSet<String> = chars[split..].iter().cloned().collect();
    let refs = glyph_decomp::select_reference_set_from(table, &chars[..split], spec.ref_capacity, spec.min_new)?;
    let mapping = glyph_decomp::build_full_mapping(table, &refs, &chars, spec.k)?;
    let styles = style_bank(spec.styles, spec.seen_styles, derive_seed(spec.seed, 0x57));
    make_dataset(table, &styles, &chars, &unseen, &refs.glyphs, &mapping, spec.size, spec.seed)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.styles.len() * self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn char_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| CoreError::Data(format!("unknown character `{name}`")))
    }

    pub fn style_index(&self, id: &str) -> Result<usize> {
        self.styles
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| CoreError::Data(format!("unknown style `{id}`")))
    }

    pub fn is_seen_char(&self, c: usize) -> bool {
        !self.unseen_chars.contains(&self.chars[c])
    }

    pub fn content_image(&self, c: usize) -> &GlyphImage {
        &self.content[c]
    }

    pub fn glyph(&self, style: usize, c: usize) -> &GlyphImage {
        &self.glyphs[style][c]
    }

    /// Mapped references for `c`, as character indices.
    pub fn mapped_refs(&self, c: usize) -> Vec<usize> {
        self.mapping
            .get(&self.chars[c])
            .expect("validated mapping")
            .iter()
            .map(|r| self.index[r])
            .collect()
    }

    pub fn sample(&self, style: usize, c: usize) -> Sample {
        Sample {
            style,
            content: c,
            refs: self.mapped_refs(c),
        }
    }

    /// Every pair in style-major order.
    pub fn samples(&self) -> Vec<Sample> {
        (0..self.styles.len())
            .flat_map(|s| (0..self.chars.len()).map(move |c| (s, c)))
            .map(|(s, c)| self.sample(s, c))
            .collect()
    }

    /// Pairs of seen styles and seen characters.
    pub fn train_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs(true, true)
    }

    pub fn pairs(&self, seen_style: bool, seen_char: bool) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (s, st) in self.styles.iter().enumerate() {
            if st.seen != seen_style {
                continue;
            }
            for c in 0..self.chars.len() {
                if self.is_seen_char(c) == seen_char {
                    out.push((s, c));
                }
            }
        }
        out
    }

    /// Training characters sharing at least one conspicuous component with `c`.
    pub fn sharing_pool(&self, c: usize) -> Result<Vec<usize>> {
        let seen: Vec<String> = self
            .chars
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_seen_char(*i))
            .map(|(_, n)| n.clone())
            .collect();
        let pool = glyph_decomp::glyphs_sharing_component(&self.table, &seen, &self.chars[c])?;
        Ok(pool.iter().map(|n| self.index[n]).collect())
    }

    fn info(&self) -> DatasetInfo {
        DatasetInfo {
            size: self.size,
            k: self.k,
            seed: self.seed,
            chars: self.chars.clone(),
            unseen_chars: self.unseen_chars.iter().cloned().collect(),
            references: self.references.clone(),
        }
    }

    /// Everything needed to re-render the dataset, as `(key, text)` pairs.
    pub fn describe(&self) -> Vec<(String, String)> {
        vec![
            ("data.info".into(), toml::to_string(&self.info()).expect("plain struct serializes")),
            ("data.table".into(), self.table.serialize()),
            ("data.mapping".into(), self.mapping.to_tsv()),
            ("data.styles".into(), styles_to_tsv(&self.styles)),
        ]
    }

    /// Inverse of [`Dataset::describe`]; images are rendered afresh.
    pub fn from_description<'a>(get: impl Fn(&str) -> Result<&'a str>) -> Result<Self> {
        let info: DatasetInfo =
            toml::from_str(get("data.info")?).map_err(|e| CoreError::Data(format!("dataset info: {e}")))?;
        let table = DecompositionTable::parse(get("data.table")?)?;
        let mapping = ReferenceMapping::from_tsv(get("data.mapping")?)?;
        let styles = styles_from_tsv(get("data.styles")?)?;
        let unseen = info.unseen_chars.iter().cloned().collect();
        make_dataset(&table, &styles, &info.chars, &unseen, &info.references, &mapping, info.size, info.seed)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let write = |rel: &str, text: &str| {
            let p = dir.join(rel);
            std::fs::write(&p, text).map_err(io_err(&p))
        };
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let info = self.info();
        write("info.toml", &toml::to_string(&info).map_err(|e| CoreError::Data(e.to_string()))?)?;
        write("table.tsv", &self.table.serialize())?;
        write("mapping.tsv", &self.mapping.to_tsv())?;
        write("styles.tsv", &styles_to_tsv(&self.styles))?;
        let mut meta = String::from("style\tcontent\tstyle_split\tchar_split\timage\tmask\n");
        let mut emit = |img: &GlyphImage, split: &str, char_split: &str| -> Result<()> {
            let image = format!("images/{}/{}.png", img.style_id, img.content_id);
            let mask = format!("masks/{}/{}.png", img.style_id, img.content_id);
            save_gray(&dir.join(&image), img.size, &img.to_bytes())?;
            save_gray(&dir.join(&mask), img.size, &img.mask)?;
            let _ = writeln!(meta, "{}\t{}\t{split}\t{char_split}\t{image}\t{mask}", img.style_id, img.content_id);
            Ok(())
        };
        for (c, img) in self.content.iter().enumerate() {
            emit(img, "content", split_name(self.is_seen_char(c)))?;
        }
        for (s, row) in self.glyphs.iter().enumerate() {
            for (c, img) in row.iter().enumerate() {
                emit(img, split_name(self.styles[s].seen), split_name(self.is_seen_char(c)))?;
            }
        }
        write("meta.tsv", &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |rel: &str| {
            let p = dir.join(rel);
            std::fs::read_to_string(&p).map_err(io_err(&p))
        };
        let info: DatasetInfo =
            toml::from_str(&read("info.toml")?).map_err(|e| CoreError::Data(format!("info.toml: {e}")))?;
        let table = DecompositionTable::parse(&read("table.tsv")?)?;
        let mapping = ReferenceMapping::from_tsv(&read("mapping.tsv")?)?;
        let styles = styles_from_tsv(&read("styles.tsv")?)?;
        let index: HashMap<String, usize> = info.chars.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        let load = |style: &str, c: &str| -> Result<GlyphImage> {
            let pixels = load_gray(&dir.join(format!("images/{style}/{c}.png")), info.size)?;
            let mask = load_gray(&dir.join(format!("masks/{style}/{c}.png")), info.size)?;
            Ok(GlyphImage {
                size: info.size,
                pixels: pixels.iter().map(|&b| b as f32 / 255.0).collect(),
                mask,
                content_id: c.to_string(),
                style_id: style.to_string(),
            })
        };
        let content = info.chars.iter().map(|c| load(NEUTRAL_STYLE, c)).collect::<Result<Vec<_>>>()?;
        let glyphs = styles
            .iter()
            .map(|s| info.chars.iter().map(|c| load(&s.id, c)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        for c in &info.chars {
            if mapping.get(c).is_none() {
                return Err(CoreError::Data(format!("mapping.tsv has no entry for `{c}`")));
            }
        }
        Ok(Self {
            size: info.size,
            k: mapping.k(),
            seed: info.seed,
            table,
            chars: info.chars,
            styles,
            unseen_chars: info.unseen_chars.into_iter().collect(),
            references: info.references,
            mapping,
            content,
            glyphs,
            index,
        })
    }
}

fn split_name(seen: bool) -> &'static str {
    if seen {
        "seen"
    } else {
        "unseen"
    }
}

pub fn styles_to_tsv(styles: &[NamedStyle]) -> String {
    let mut out = String::from("id\tseen\tstroke_width\tslant\tcorner_radius\tink_level\tjitter_seed\tjitter_amp\n");
    for s in styles {
        let p = &s.params;
        let _ = writeln!(
            out,
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{}\t{:?}",
            s.id, s.seen, p.stroke_width, p.slant, p.corner_radius, p.ink_level, p.jitter_seed, p.jitter_amp
        );
    }
    out
}

pub fn styles_from_tsv(text: &str) -> Result<Vec<NamedStyle>> {
    let bad = |line: usize, what: &str| CoreError::Data(format!("styles line {line}: {what}"));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(bad(i + 1, "expected 8 fields"));
        }
        let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(i + 1, f[j]));
        let params = StyleParams {
            stroke_width: num(2)?,
            slant: num(3)?,
            corner_radius: num(4)?,
            ink_level: num(5)?,
            jitter_seed: f[6].parse().map_err(|_| bad(i + 1, f[6]))?,
            jitter_amp: num(7)?,
        };
        params.validate()?;
        out.push(NamedStyle {
            id: f[0].to_string(),
            seen: f[1].parse().map_err(|_| bad(i + 1, f[1]))?,
            params,
        });
    }
    if out.is_empty() {
        return Err(CoreError::Data("no styles".into()));
    }
    Ok(out)
}

pub fn save_gray(path: &Path, size: usize, bytes: &[u8]) -> Result<()> {
    save_gray_rect(path, size, size, bytes)
}

pub fn save_gray_rect(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let img = image::GrayImage::from_raw(width as u32, height as u32, bytes.to_vec())
        .ok_or_else(|| CoreError::Data(format!("{}: buffer does not match {width}×{height}", path.display())))?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| CoreError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn load_gray(path: &Path, size: usize) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(CoreError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        });
    }
    let img = image::open(path)
        .map_err(|e| CoreError::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_luma8();
    if img.width() as usize != size || img.height() as usize != size {
        return Err(CoreError::Image {
            path: path.to_path_buf(),
            reason: format!("expected {size}×{size}, got {}×{}", img.width(), img.height()),
        });
    }
    Ok(img.into_raw())
}
