//! Component trees and conspicuous-component search.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{DecompError, Result};
use crate::table::{DecompositionTable, StructureOp};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub name: String,
    pub op: StructureOp,
    /// Operator of the parent node; for the root, its own operator.
    pub context: StructureOp,
    pub level: usize,
    pub children: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentTree {
    pub root: TreeNode,
}

impl ComponentTree {
    /// Largest node level (0 for a single node).
    pub fn depth(&self) -> usize {
        fn walk(n: &TreeNode) -> usize {
            n.children.iter().map(walk).max().unwrap_or(n.level)
        }
        walk(&self.root)
    }

    /// Nodes in breadth-first order.
    pub fn nodes(&self) -> Vec<&TreeNode> {
        let mut out = vec![&self.root];
        let mut i = 0;
        while i < out.len() {
            let n = out[i];
            out.extend(n.children.iter());
            i += 1;
        }
        out
    }
}

/// Expand `glyph` recursively, keeping levels `0..max_depth`.
pub fn build_component_tree(table: &DecompositionTable, glyph: &str) -> Result<ComponentTree> {
    fn expand(table: &DecompositionTable, name: &str, context: StructureOp, level: usize) -> TreeNode {
        let op = table.op_of(name).expect("validated table");
        let children = if level + 1 < table.max_depth() {
            table
                .children_of(name)
                .iter()
                .map(|c| expand(table, c, op, level + 1))
                .collect()
        } else {
            Vec::new()
        };
        TreeNode {
            name: name.to_string(),
            op,
            context,
            level,
            children,
        }
    }
    let op = table
        .op_of(glyph)
        .ok_or_else(|| DecompError::UnknownGlyph(glyph.to_string()))?;
    Ok(ComponentTree {
        root: expand(table, glyph, op, 0),
    })
}

/// Components of one glyph found in the component universe, each with the
/// set of structure contexts it occurs in.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConspicuousSet {
    members: BTreeMap<String, BTreeSet<StructureOp>>,
}

impl ConspicuousSet {
    pub fn insert(&mut self, component: &str, context: StructureOp) {
        self.members
            .entry(component.to_string())
            .or_default()
            .insert(context);
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, component: &str) -> bool {
        self.members.contains_key(component)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.members.keys().map(String::as_str)
    }

    pub fn contexts(&self, component: &str) -> Option<&BTreeSet<StructureOp>> {
        self.members.get(component)
    }

    pub fn id_set(&self) -> BTreeSet<String> {
        self.members.keys().cloned().collect()
    }

    /// Number of component ids present in both sets.
    pub fn shared_count(&self, other: &Self) -> usize {
        self.members.keys().filter(|k| other.members.contains_key(*k)).count()
    }

    /// Shared components that also occur under a common structure context.
    pub fn matched_context_count(&self, other: &Self) -> usize {
        self.members
            .iter()
            .filter(|(k, ctx)| {
                other
                    .members
                    .get(*k)
                    .is_some_and(|o| !ctx.is_disjoint(o))
            })
            .count()
    }
}

/// Breadth-first search over levels `0..max_depth`, collecting members of the
/// component universe with the operator of the node they hang from.
pub fn search_components(table: &DecompositionTable, glyph: &str) -> Result<ConspicuousSet> {
    let root_op = table
        .op_of(glyph)
        .ok_or_else(|| DecompError::UnknownGlyph(glyph.to_string()))?;
    let universe = table.components();
    let mut found = ConspicuousSet::default();
    if universe.contains(glyph) {
        found.insert(glyph, root_op);
    }
    let mut queue: Vec<&str> = vec![glyph];
    for _ in 1..table.max_depth() {
        let mut next = Vec::new();
        for &node in &queue {
            let op = table.op_of(node).expect("validated table");
            for child in table.children_of(node) {
                if universe.contains(child) {
                    found.insert(child, op);
                }
                next.push(child.as_str());
            }
        }
        if next.is_empty() {
            break;
        }
        queue = next;
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nested() -> DecompositionTable {
        DecompositionTable::parse(
            "@components\ta,b,d\na\tatom\nb\tatom\nd\tatom\ng1\tTB\ta,b\ng3\tLR\tg1,d\n",
        )
        .unwrap()
    }

    #[test]
    fn atom_is_a_single_node() {
        let t = nested();
        let tree = build_component_tree(&t, "a").unwrap();
        assert!(tree.root.children.is_empty());
        assert_eq!(tree.root.level, 0);
        assert_eq!(tree.depth(), 0);
    }

    #[test]
    fn nested_tree_levels() {
        let t = nested();
        let tree = build_component_tree(&t, "g3").unwrap();
        assert_eq!(tree.depth(), 2);
        let levels: Vec<(&str, usize)> = tree.nodes().iter().map(|n| (n.name.as_str(), n.level)).collect();
        assert_eq!(levels, vec![("g3", 0), ("g1", 1), ("d", 1), ("a", 2), ("b", 2)]);
        assert_eq!(tree.nodes()[3].context, StructureOp::TopBottom);
        assert_eq!(tree.nodes()[2].context, StructureOp::LeftRight);
    }

    #[test]
    fn depth_is_truncated() {
        let t = nested().with_max_depth(2).unwrap();
        assert_eq!(build_component_tree(&t, "g3").unwrap().depth(), 1);
        let t = nested().with_max_depth(1).unwrap();
        assert_eq!(build_component_tree(&t, "g3").unwrap().depth(), 0);
    }

    #[test]
    fn direct_children_in_universe() {
        let t = nested();
        let s = search_components(&t, "g1").unwrap();
        assert_eq!(s.ids().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn nested_search() {
        let t = nested();
        let s = search_components(&t, "g3").unwrap();
        assert_eq!(s.ids().collect::<Vec<_>>(), vec!["a", "b", "d"]);
        assert!(s.contexts("a").unwrap().contains(&StructureOp::TopBottom));
        assert!(s.contexts("d").unwrap().contains(&StructureOp::LeftRight));
    }

    #[test]
    fn below_level_two_is_excluded() {
        let t = DecompositionTable::parse(
            "@components\ta,b,d,e\na\tatom\nb\tatom\nd\tatom\ne\tatom\ng1\tTB\ta,b\ng3\tLR\tg1,d\ng4\tTB\tg3,e\n",
        )
        .unwrap();
        let s = search_components(&t, "g4").unwrap();
        assert_eq!(s.ids().collect::<Vec<_>>(), vec!["d", "e"]);
    }

    #[test]
    fn root_in_universe_counts_at_level_zero() {
        let t = nested();
        let s = search_components(&t, "a").unwrap();
        assert_eq!(s.ids().collect::<Vec<_>>(), vec!["a"]);
        assert!(matches!(search_components(&t, "zz"), Err(DecompError::UnknownGlyph(_))));
    }

    #[test]
    fn shared_and_matched_counts() {
        let mut c = ConspicuousSet::default();
        c.insert("a", StructureOp::LeftRight);
        c.insert("b", StructureOp::TopBottom);
        let mut r = ConspicuousSet::default();
        r.insert("a", StructureOp::TopBottom);
        r.insert("b", StructureOp::TopBottom);
        r.insert("z", StructureOp::TopBottom);
        assert_eq!(c.shared_count(&r), 2);
        assert_eq!(c.matched_context_count(&r), 1);
    }
}
