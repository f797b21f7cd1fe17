use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecompError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: glyph `{glyph}` already defined on line {first}")]
    DuplicateGlyph {
        glyph: String,
        line: usize,
        first: usize,
    },
    #[error("line {line}: `{glyph}` refers to unknown component `{child}`")]
    UnknownChild {
        glyph: String,
        child: String,
        line: usize,
    },
    #[error("line {line}: decomposition of `{glyph}` is cyclic")]
    Cycle { glyph: String, line: usize },
    #[error("unknown glyph `{0}`")]
    UnknownGlyph(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = DecompError> = std::result::Result<T, E>;
