use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error in `{param}`: {detail}")]
    Domain { param: &'static str, detail: String },

    #[error("chain {chain}: initialization failed: {detail}")]
    Initialization { chain: usize, detail: String },

    #[error("evaluation undefined: {0}")]
    Undefined(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
