//! Independent oracles for component search, reference selection and
//! greedy mapping. Shared with the workspace acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OPS: [&str; 4] = ["LR", "TB", "ENC", "OTHER"];

/// A raw table kept as plain maps, parsed without the library.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub text: String,
    pub order: Vec<String>,
    pub rows: BTreeMap<String, (String, Vec<String>)>,
    pub universe: BTreeSet<String>,
}

/// Random acyclic table with at most 50 glyphs. Children are drawn from atoms
/// and earlier glyphs, so nesting depth varies. Some composite glyphs join the
/// component universe, and some atoms get explicit `atom` rows.
pub fn random_table(seed: u64) -> RawTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_atoms = rng.random_range(3..=10);
    let n_glyphs = rng.random_range(1..=50 - n_atoms.min(10));
    let atoms: Vec<String> = (0..n_atoms).map(|i| format!("a{i}")).collect();
    let mut universe: BTreeSet<String> = atoms.iter().filter(|_| rng.random_bool(0.85)).cloned().collect();
    if universe.is_empty() {
        universe.insert(atoms[0].clone());
    }
    let mut order = Vec::new();
    let mut rows = BTreeMap::new();
    let mut names: Vec<String> = atoms.clone();
    let mut text = String::new();
    // atoms outside the universe must be declared; some others are too
    for a in &atoms {
        if !universe.contains(a) || rng.random_bool(0.2) {
            order.push(a.clone());
            rows.insert(a.clone(), ("ATOM".to_string(), vec![]));
            text.push_str(&format!("{a}\tATOM\n"));
        }
    }
    for i in 0..n_glyphs {
        let name = format!("g{i}");
        let op = *OPS.choose(&mut rng).unwrap();
        let arity = rng.random_range(1..=3);
        let children: Vec<String> = (0..arity).map(|_| names.choose(&mut rng).unwrap().clone()).collect();
        if rng.random_bool(0.15) {
            universe.insert(name.clone());
        }
        text.push_str(&format!("{name}\t{op}\t{}\n", children.join(",")));
        order.push(name.clone());
        rows.insert(name.clone(), (op.to_string(), children));
        names.push(name);
    }
    // shuffle glyph order so frequency order is not topological
    let mut lines: Vec<&str> = text.lines().collect();
    let mut perm: Vec<usize> = (0..lines.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    lines = perm.iter().map(|&i| lines[i]).collect();
    let order: Vec<String> = perm.iter().map(|&i| order[i].clone()).collect();
    let header = format!(
        "@components\t{}\n",
        universe.iter().cloned().collect::<Vec<_>>().join(",")
    );
    let text = format!("{header}{}\n", lines.join("\n"));
    RawTable {
        text,
        order,
        rows,
        universe,
    }
}

impl RawTable {
    fn op(&self, name: &str) -> &str {
        self.rows.get(name).map(|r| r.0.as_str()).unwrap_or("ATOM")
    }

    fn children(&self, name: &str) -> &[String] {
        self.rows.get(name).map(|r| r.1.as_slice()).unwrap_or(&[])
    }

    /// Expand the complete tree, keep nodes at level <= 2 that belong to the
    /// universe, and record the operator they hang from.
    pub fn conspicuous(&self, glyph: &str) -> BTreeMap<String, BTreeSet<String>> {
        let mut nodes: Vec<(String, usize, String)> = Vec::new();
        fn walk(t: &RawTable, name: &str, level: usize, ctx: &str, out: &mut Vec<(String, usize, String)>) {
            out.push((name.to_string(), level, ctx.to_string()));
            for c in t.children(name) {
                walk(t, c, level + 1, t.op(name), out);
            }
        }
        walk(self, glyph, 0, self.op(glyph), &mut nodes);
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (name, level, ctx) in nodes {
            if level <= 2 && self.universe.contains(&name) {
                out.entry(name).or_default().insert(ctx);
            }
        }
        out
    }

    /// Plain replay of the selection loop.
    pub fn select(&self, capacity: usize, min_new: usize) -> (Vec<String>, BTreeSet<String>) {
        let mut picked = Vec::new();
        let mut covered = BTreeSet::new();
        for g in &self.order {
            if picked.len() == capacity {
                break;
            }
            let comps = self.conspicuous(g);
            let fresh: Vec<&String> = comps.keys().filter(|c| !covered.contains(*c)).collect();
            if fresh.len() >= min_new {
                covered.extend(fresh.into_iter().cloned());
                picked.push(g.clone());
            }
        }
        (picked, covered)
    }
}

fn shared(a: &BTreeMap<String, BTreeSet<String>>, b: &BTreeMap<String, BTreeSet<String>>) -> (usize, usize) {
    let mut ids = 0;
    let mut ctx = 0;
    for (id, ca) in a {
        if let Some(cb) = b.get(id) {
            ids += 1;
            if !ca.is_disjoint(cb) {
                ctx += 1;
            }
        }
    }
    (ids, ctx)
}

/// Checks each round of a produced mapping against an exhaustive scan of
/// the remaining pool.
pub fn verify_mapping(t: &RawTable, refs: &[String], content: &str, k: usize, picks: &[String]) -> Result<(), String> {
    if picks.len() != k {
        return Err(format!("{content}: {} picks, expected {k}", picks.len()));
    }
    let target = t.conspicuous(content);
    let mut remaining: Vec<(usize, &String)> = refs.iter().enumerate().collect();
    for (round, pick) in picks.iter().enumerate() {
        if remaining.is_empty() {
            if pick != &picks[0] {
                return Err(format!("{content}: padding slot {round} is {pick}, expected {}", picks[0]));
            }
            continue;
        }
        let Some(slot) = remaining.iter().position(|(_, r)| *r == pick) else {
            return Err(format!("{content}: round {round} picked {pick}, not in remaining pool"));
        };
        let (pos, _) = remaining[slot];
        let (ids, ctx) = shared(&target, &t.conspicuous(pick));
        for &(other_pos, other) in &remaining {
            if other_pos == pos {
                continue;
            }
            let (o_ids, o_ctx) = shared(&target, &t.conspicuous(other));
            let beats = o_ids > ids
                || (o_ids == ids && o_ctx > ctx)
                || (o_ids == ids && o_ctx == ctx && other_pos < pos);
            if beats {
                return Err(format!(
                    "{content}: round {round} picked {pick} ({ids},{ctx}) over {other} ({o_ids},{o_ctx})"
                ));
            }
        }
        remaining.remove(slot);
    }
    Ok(())
}

/// Minimal reader for the table format, enough for the bundled tables.
pub fn read_table(text: &str) -> RawTable {
    let mut order = Vec::new();
    let mut rows = BTreeMap::new();
    let mut universe = BTreeSet::new();
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        match f[0] {
            "@components" => universe = f[1].split(',').map(|s| s.trim().to_string()).collect(),
            "@max_depth" => assert_eq!(f[1].trim(), "3", "oracle assumes three levels"),
            name => {
                let children = f.get(2).map(|c| c.split(',').map(|s| s.trim().to_string()).collect()).unwrap_or_default();
                order.push(name.to_string());
                rows.insert(name.to_string(), (f[1].to_string(), children));
            }
        }
    }
    RawTable {
        text: text.to_string(),
        order,
        rows,
        universe,
    }
}
