use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A dual iterate left the domain of the conjugate loss.
    #[error("{} is outside the domain of the {loss} conjugate", describe_domain_arg(*.index, *.value))]
    Domain {
        loss: &'static str,
        index: Option<usize>,
        value: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("transport failure in round {round}: {source}")]
    Transport {
        round: u32,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn describe_domain_arg(index: Option<usize>, value: f64) -> String {
    match index {
        Some(i) => format!("dual coordinate {i} = {value}"),
        None => format!("argument {value}"),
    }
}
