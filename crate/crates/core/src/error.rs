use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The environment emitted something its declared contract forbids
    /// (reward outside the declared bound, wrong dimension, ...).
    #[error("environment contract violated: {0}")]
    EnvironmentContract(String),

    #[error("action {action:?} lies outside the action box; density is zero there")]
    OutsideActionBox { action: Vec<f64> },

    #[error("baseline bound violated: |b(s)| = {value} > declared bound {bound}")]
    BaselineBound { value: f64, bound: f64 },

    /// The per-step QCQP has an empty feasible set (A < -tol).
    #[error("update problem infeasible: A = {a} < -{tol}")]
    Infeasible { a: f64, tol: f64 },

    #[error("episode {index}: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("safety certificate unattainable: {0}")]
    CertificateUnattainable(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
