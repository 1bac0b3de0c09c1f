use thiserror::Error;

pub type Result<T> = std::result::Result<T, QinError>;

#[derive(Debug, Error)]
pub enum QinError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("item id {id} out of range (count {count}){}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    IdOutOfRange {
        id: usize,
        count: usize,
        line: Option<usize>,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic {
        expected: &'static str,
        found: Vec<u8>,
    },

    #[error("shape mismatch for `{name}`: file has {found:?}, config expects {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("malformed record at line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("labels contain a single class; AUC is undefined")]
    SingleClass,

    #[error("non-finite loss at epoch {epoch}, step {step} (loss = {loss})")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("non-finite function value at coordinate {coord}")]
    NonFiniteValue { coord: usize },

    #[error("trace does not match configuration: {0}")]
    TraceMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl QinError {
    pub(crate) fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        QinError::DimensionMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
