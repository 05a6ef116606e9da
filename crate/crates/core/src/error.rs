use thiserror::Error;

pub type Result<T> = std::result::Result<T, BablrError>;

#[derive(Debug, Error)]
pub enum BablrError {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid prior configuration: {0}")]
    InvalidPrior(String),

    #[error("invalid sampler configuration: {0}")]
    InvalidSampler(String),

    #[error("initialization failed: no finite log density after {attempts} attempts")]
    Initialization { attempts: usize },

    #[error("log density is not finite at the starting position")]
    NonFiniteStart,

    #[error("unknown subject id `{0}`")]
    UnknownSubject(String),

    #[error("invalid simulation design: {0}")]
    InvalidDesign(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
