//! Reference-set selection and k-shot content-reference mapping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{DecompError, Result};
use crate::table::DecompositionTable;
use crate::tree::{search_components, ConspicuousSet};

pub const DEFAULT_MIN_NEW: usize = 2;
pub const DEFAULT_SHOTS: usize = 3;

/// Selected style-reference glyphs and the components they cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceSet {
    pub glyphs: Vec<String>,
    pub covered: BTreeSet<String>,
    pub capacity: usize,
    pub min_new: usize,
    /// Number of previously uncovered components each glyph added.
    pub contributions: Vec<usize>,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }
}

/// Scan the table's glyphs in frequency order.
pub fn select_reference_set(
    table: &DecompositionTable,
    capacity: usize,
    min_new: usize,
) -> Result<ReferenceSet> {
    select_reference_set_from(table, table.glyphs(), capacity, min_new)
}

/// Scan `candidates` in order; a glyph joins the set when it brings at least
/// `min_new` components not yet covered. Stops once `capacity` glyphs are in.
pub fn select_reference_set_from(
    table: &DecompositionTable,
    candidates: &[String],
    capacity: usize,
    min_new: usize,
) -> Result<ReferenceSet> {
    if capacity == 0 || min_new == 0 {
        return Err(DecompError::InvalidParameter(
            "reference capacity and new-component threshold must be at least 1".into(),
        ));
    }
    let mut set = ReferenceSet {
        glyphs: Vec::new(),
        covered: BTreeSet::new(),
        capacity,
        min_new,
        contributions: Vec::new(),
    };
    for glyph in candidates {
        if set.glyphs.len() >= capacity {
            break;
        }
        let found = search_components(table, glyph)?;
        let new = found.ids().filter(|c| !set.covered.contains(*c)).count();
        if new >= min_new {
            set.covered.extend(found.ids().map(str::to_string));
            set.glyphs.push(glyph.clone());
            set.contributions.push(new);
        }
    }
    Ok(set)
}

/// Rank of a candidate reference for one content glyph: more shared
/// components first, then more shared components in a matching structure
/// context, then earlier position in the reference set.
fn rank_key(content: &ConspicuousSet, candidate: &ConspicuousSet, position: usize) -> (usize, usize, std::cmp::Reverse<usize>) {
    (
        content.shared_count(candidate),
        content.matched_context_count(candidate),
        std::cmp::Reverse(position),
    )
}

/// Greedy k-shot references for one content glyph.
///
/// Each round takes the best remaining reference (see ranking above) and
/// removes it from the pool. When the pool runs dry the first pick is
/// duplicated until there are `k` entries.
pub fn map_references(
    table: &DecompositionTable,
    refs: &ReferenceSet,
    content: &str,
    k: usize,
) -> Result<Vec<String>> {
    let pool = ref_components(table, refs)?;
    map_with_pool(table, &pool, content, k)
}

fn ref_components(table: &DecompositionTable, refs: &ReferenceSet) -> Result<Vec<(usize, String, ConspicuousSet)>> {
    if refs.is_empty() {
        return Err(DecompError::InvalidParameter("reference set is empty".into()));
    }
    refs.glyphs
        .iter()
        .enumerate()
        .map(|(i, g)| Ok((i, g.clone(), search_components(table, g)?)))
        .collect()
}

fn map_with_pool(
    table: &DecompositionTable,
    pool: &[(usize, String, ConspicuousSet)],
    content: &str,
    k: usize,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(DecompError::InvalidParameter("k must be at least 1".into()));
    }
    let target = search_components(table, content)?;
    let mut remaining: Vec<&(usize, String, ConspicuousSet)> = pool.iter().collect();
    let mut picks: Vec<String> = Vec::with_capacity(k);
    while picks.len() < k && !remaining.is_empty() {
        let best = remaining
            .iter()
            .enumerate()
            .max_by_key(|(_, (pos, _, comps))| rank_key(&target, comps, *pos))
            .map(|(i, _)| i)
            .expect("non-empty pool");
        picks.push(remaining.remove(best).1.clone());
    }
    while picks.len() < k {
        picks.push(picks[0].clone());
    }
    Ok(picks)
}

/// Fixed k-shot reference lists for a set of content glyphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceMapping {
    k: usize,
    entries: Vec<(String, Vec<String>)>,
    index: BTreeMap<String, usize>,
}

impl ReferenceMapping {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn insert(&mut self, content: String, refs: Vec<String>) -> Result<()> {
        if refs.len() != self.k {
            return Err(DecompError::InvalidParameter(format!(
                "`{content}` has {} references, expected {}",
                refs.len(),
                self.k
            )));
        }
        match self.index.get(&content) {
            Some(&i) => self.entries[i].1 = refs,
            None => {
                self.index.insert(content.clone(), self.entries.len());
                self.entries.push((content, refs));
            }
        }
        Ok(())
    }

    pub fn get(&self, content: &str) -> Option<&[String]> {
        self.index.get(content).map(|&i| self.entries[i].1.as_slice())
    }

    pub fn entries(&self) -> &[(String, Vec<String>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `content<TAB>ref1,ref2,...` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (content, refs) in &self.entries {
            let _ = writeln!(out, "{content}\t{}", refs.join(","));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut mapping: Option<Self> = None;
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: &str| DecompError::Malformed {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let (content, refs) = line.split_once('\t').ok_or_else(|| malformed("expected content<TAB>refs"))?;
            let refs: Vec<String> = refs.split(',').map(|s| s.trim().to_string()).collect();
            if content.is_empty() || refs.iter().any(String::is_empty) {
                return Err(malformed("empty glyph name"));
            }
            let m = mapping.get_or_insert_with(|| Self::new(refs.len()));
            m.insert(content.to_string(), refs)
                .map_err(|e| malformed(&e.to_string()))?;
        }
        mapping.ok_or_else(|| DecompError::Malformed {
            line: 0,
            reason: "empty mapping".into(),
        })
    }
}

/// Map every content glyph; the result is fixed for the rest of a run.
pub fn build_full_mapping(
    table: &DecompositionTable,
    refs: &ReferenceSet,
    contents: &[String],
    k: usize,
) -> Result<ReferenceMapping> {
    let pool = ref_components(table, refs)?;
    let mut mapping = ReferenceMapping::new(k);
    for c in contents {
        mapping.insert(c.clone(), map_with_pool(table, &pool, c, k)?)?;
    }
    Ok(mapping)
}

/// Glyphs from `pool` sharing at least one conspicuous component with `content`.
pub fn glyphs_sharing_component(
    table: &DecompositionTable,
    pool: &[String],
    content: &str,
) -> Result<Vec<String>> {
    let target = search_components(table, content)?;
    let mut out = Vec::new();
    for g in pool {
        if search_components(table, g)?.shared_count(&target) > 0 {
            out.push(g.clone());
        }
    }
    Ok(out)
}
