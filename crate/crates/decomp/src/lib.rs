//! Glyph decomposition tables, conspicuous components, reference-set
//! selection and content-reference mapping.

pub mod error;
pub mod refsel;
pub mod table;
pub mod tree;

pub use error::{DecompError, Result};
pub use refsel::{
    build_full_mapping, glyphs_sharing_component, map_references, select_reference_set,
    select_reference_set_from, ReferenceMapping, ReferenceSet, DEFAULT_MIN_NEW, DEFAULT_SHOTS,
};
pub use table::{DecompositionTable, Entry, StructureOp, DEFAULT_MAX_DEPTH};
pub use tree::{build_component_tree, search_components, ComponentTree, ConspicuousSet, TreeNode};

/// Bundled demo table: 40 composite glyphs over 12 atomic components.
pub const SAMPLE_TABLE: &str = include_str!("../data/sample_table.tsv");

/// Five-glyph table used in docs and CLI examples.
pub const TOY_TABLE: &str = include_str!("../data/toy_table.tsv");
