//! Single-level decomposition tables.
//!
//! Text format, one glyph per line, tab separated:
//!
//! ```text
//! # comment
//! @components<TAB>a,b,c        component universe (default: every atom)
//! @max_depth<TAB>3             number of tree levels searched (default 3)
//! g1<TAB>LR<TAB>a,b
//! a<TAB>atom
//! ```
//!
//! Line order is the glyph frequency order. Structure operators are `LR`,
//! `TB`, `ENC`, `ATOM` and `OTHER` (case-insensitive); ideographic
//! description characters are mapped onto these.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{DecompError, Result};

pub const DEFAULT_MAX_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StructureOp {
    LeftRight,
    TopBottom,
    Enclosure,
    Atom,
    Other,
}

impl StructureOp {
    pub fn as_str(self) -> &'static str {
        match self {
            StructureOp::LeftRight => "LR",
            StructureOp::TopBottom => "TB",
            StructureOp::Enclosure => "ENC",
            StructureOp::Atom => "ATOM",
            StructureOp::Other => "OTHER",
        }
    }
}

impl fmt::Display for StructureOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StructureOp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let op = match s.to_ascii_uppercase().as_str() {
            "LR" | "⿰" | "⿲" => StructureOp::LeftRight,
            "TB" | "⿱" | "⿳" => StructureOp::TopBottom,
            "ENC" | "⿴" | "⿵" | "⿶" | "⿷" | "⿸" | "⿹" | "⿺" => StructureOp::Enclosure,
            "ATOM" => StructureOp::Atom,
            "OTHER" | "⿻" => StructureOp::Other,
            _ => return Err(format!("unknown structure operator `{s}`")),
        };
        Ok(op)
    }
}

/// Equality ignores `line`: two entries are the same decomposition wherever
/// they were read from.
#[derive(Debug, Clone, Eq)]
pub struct Entry {
    pub op: StructureOp,
    pub children: Vec<String>,
    pub line: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.op == other.op && self.children == other.children
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionTable {
    order: Vec<String>,
    entries: HashMap<String, Entry>,
    components: BTreeSet<String>,
    max_depth: usize,
}

impl DecompositionTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut order = Vec::new();
        let mut entries: HashMap<String, Entry> = HashMap::new();
        let mut components: Option<BTreeSet<String>> = None;
        let mut max_depth = DEFAULT_MAX_DEPTH;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim_end_matches('\r');
            if content.trim().is_empty() || content.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = content.split('\t').collect();
            let malformed = |reason: String| DecompError::Malformed { line, reason };

            if let Some(directive) = fields[0].strip_prefix('@') {
                if fields.len() != 2 {
                    return Err(malformed(format!("directive @{directive} takes one value")));
                }
                match directive {
                    "components" => components = Some(split_list(fields[1]).collect()),
                    "max_depth" => {
                        max_depth = fields[1]
                            .trim()
                            .parse()
                            .ok()
                            .filter(|&d: &usize| d >= 1)
                            .ok_or_else(|| malformed(format!("bad max depth `{}`", fields[1])))?;
                    }
                    other => return Err(malformed(format!("unknown directive @{other}"))),
                }
                continue;
            }

            if !(2..=3).contains(&fields.len()) {
                return Err(malformed(format!(
                    "expected `glyph<TAB>op<TAB>children`, got {} fields",
                    fields.len()
                )));
            }
            let glyph = fields[0].trim();
            if glyph.is_empty() {
                return Err(malformed("empty glyph name".into()));
            }
            let op: StructureOp = fields[1].trim().parse().map_err(malformed)?;
            let children: Vec<String> = fields.get(2).map(|f| split_list(f).collect()).unwrap_or_default();
            match (op, children.is_empty()) {
                (StructureOp::Atom, false) => {
                    return Err(malformed(format!("atom `{glyph}` lists children")))
                }
                (op, true) if op != StructureOp::Atom => {
                    return Err(malformed(format!("`{glyph}` ({op}) has no children")))
                }
                _ => {}
            }
            if let Some(prev) = entries.get(glyph) {
                return Err(DecompError::DuplicateGlyph {
                    glyph: glyph.to_string(),
                    line,
                    first: prev.line,
                });
            }
            order.push(glyph.to_string());
            entries.insert(glyph.to_string(), Entry { op, children, line });
        }

        let components = components.unwrap_or_else(|| {
            order
                .iter()
                .filter(|g| entries[*g].op == StructureOp::Atom)
                .cloned()
                .collect()
        });
        let table = Self {
            order,
            entries,
            components,
            max_depth,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        for glyph in &self.order {
            let entry = &self.entries[glyph];
            for child in &entry.children {
                if !self.entries.contains_key(child) && !self.components.contains(child) {
                    return Err(DecompError::UnknownChild {
                        glyph: glyph.clone(),
                        child: child.clone(),
                        line: entry.line,
                    });
                }
            }
        }
        // Iterative DFS with colours: 1 = on stack, 2 = finished.
        let mut colour: HashMap<&str, u8> = HashMap::new();
        for root in &self.order {
            if colour.contains_key(root.as_str()) {
                continue;
            }
            let mut stack: Vec<(&str, usize)> = vec![(root.as_str(), 0)];
            colour.insert(root.as_str(), 1);
            while let Some((node, next)) = stack.pop() {
                let children = self.entries.get(node).map(|e| e.children.as_slice()).unwrap_or(&[]);
                if next < children.len() {
                    stack.push((node, next + 1));
                    let child = children[next].as_str();
                    match colour.get(child) {
                        Some(1) => {
                            return Err(DecompError::Cycle {
                                glyph: node.to_string(),
                                line: self.entries[node].line,
                            })
                        }
                        Some(_) => {}
                        None => {
                            colour.insert(child, 1);
                            stack.push((child, 0));
                        }
                    }
                } else {
                    colour.insert(node, 2);
                }
            }
        }
        Ok(())
    }

    /// Canonical text form; `parse(serialize(t)) == t` up to line numbers.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("@components\t");
        out.push_str(&self.components.iter().cloned().collect::<Vec<_>>().join(","));
        out.push('\n');
        out.push_str(&format!("@max_depth\t{}\n", self.max_depth));
        for glyph in &self.order {
            let e = &self.entries[glyph];
            if e.op == StructureOp::Atom {
                out.push_str(&format!("{glyph}\t{}\n", e.op));
            } else {
                out.push_str(&format!("{glyph}\t{}\t{}\n", e.op, e.children.join(",")));
            }
        }
        out
    }

    /// Glyph list in frequency (file) order.
    pub fn glyphs(&self) -> &[String] {
        &self.order
    }

    /// Glyphs with a non-atomic decomposition, in frequency order.
    pub fn composite_glyphs(&self) -> Vec<String> {
        self.order
            .iter()
            .filter(|g| self.entries[*g].op != StructureOp::Atom)
            .cloned()
            .collect()
    }

    pub fn entry(&self, glyph: &str) -> Option<&Entry> {
        self.entries.get(glyph)
    }

    pub fn components(&self) -> &BTreeSet<String> {
        &self.components
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn with_max_depth(mut self, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(DecompError::InvalidParameter("max depth must be at least 1".into()));
        }
        self.max_depth = depth;
        Ok(self)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name) || self.components.contains(name)
    }

    /// Operator of a known name; undeclared components are atomic.
    pub fn op_of(&self, name: &str) -> Option<StructureOp> {
        match self.entries.get(name) {
            Some(e) => Some(e.op),
            None if self.components.contains(name) => Some(StructureOp::Atom),
            None => None,
        }
    }

    /// Direct children of a known name (empty for atoms).
    pub fn children_of(&self, name: &str) -> &[String] {
        self.entries.get(name).map(|e| e.children.as_slice()).unwrap_or(&[])
    }

    /// Atomic leaves reached by full (untruncated) expansion, in drawing order.
    pub fn atoms_of(&self, glyph: &str) -> Result<Vec<String>> {
        if !self.contains(glyph) {
            return Err(DecompError::UnknownGlyph(glyph.to_string()));
        }
        let mut out = Vec::new();
        let mut stack = vec![glyph];
        while let Some(g) = stack.pop() {
            let children = self.children_of(g);
            if children.is_empty() {
                out.push(g.to_string());
            } else {
                stack.extend(children.iter().rev().map(String::as_str));
            }
        }
        Ok(out)
    }

    /// Every atom that appears anywhere in the table, sorted.
    pub fn atom_universe(&self) -> BTreeSet<String> {
        let mut atoms = BTreeSet::new();
        for g in &self.order {
            for a in self.atoms_of(g).expect("table glyph") {
                atoms.insert(a);
            }
        }
        atoms
    }

    /// Map from atom name to a dense label `1..=n` (0 is background).
    pub fn atom_labels(&self) -> BTreeMap<String, u8> {
        self.atom_universe()
            .into_iter()
            .enumerate()
            .map(|(i, a)| (a, u8::try_from(i + 1).expect("at most 255 atoms")))
            .collect()
    }
}

fn split_list(field: &str) -> impl Iterator<Item = String> + '_ {
    field
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

impl FromStr for DecompositionTable {
    type Err = DecompError;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}
