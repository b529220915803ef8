use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: {lhs:?} vs {rhs:?}")]
    Shape {
        layer: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("graph state: {0}")]
    State(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(layer: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        layer,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
