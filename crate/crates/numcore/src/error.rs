use thiserror::Error;

pub type Result<T, E = NumError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for size {size}")]
    Index {
        op: &'static str,
        index: i64,
        size: usize,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite gradient in parameter `{param}`; step rejected")]
    NonFiniteGradient { param: String },
}
