use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or parameters that cannot be combined.
    #[error("configuration error: {0}")]
    Config(String),

    /// A compressed payload that cannot be decoded. `offset` is the byte
    /// offset inside the payload being decoded.
    #[error("corrupt stream at byte {offset}: {reason}")]
    CorruptStream { offset: usize, reason: String },

    /// Malformed container bytes (headers, magic numbers, lengths).
    #[error("format error: {0}")]
    Format(String),

    /// Slice buffer used out of order.
    #[error("slice buffer protocol error: {0}")]
    Protocol(String),

    /// Exact-check mode found a result that does not fit the accumulators.
    #[error("accumulator overflow at (x={x}, y={y}, o={o}): exact value {value} does not fit {bits} bits")]
    Overflow {
        x: usize,
        y: usize,
        o: usize,
        value: i64,
        bits: u32,
    },

    #[error("unsupported value: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Failure inside one layer of a network run.
    #[error("layer {index}: {source}")]
    Layer { index: usize, source: Box<Error> },
}

impl Error {
    /// The underlying error with any layer context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn in_layer(self, index: usize) -> Self {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer {
                index,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn corrupt(offset: usize, reason: impl Into<String>) -> Self {
        Error::CorruptStream {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
