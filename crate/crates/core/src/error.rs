use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("attention query row {row} has no attendable key")]
    FullyMasked { row: usize },

    #[error("loss has no non-pad target positions")]
    EmptyLoss,

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape")]
    BackwardTwice,

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error("duplicate language `{0}`")]
    DuplicateLanguage(String),

    #[error("invalid sharing spec: {0}")]
    Spec(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("every parameter is frozen; nothing to train")]
    NothingTrainable,

    #[error("data stream for task {0} is empty")]
    EmptyStream(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary hash mismatch for language `{lang}`")]
    VocabHashMismatch { lang: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
