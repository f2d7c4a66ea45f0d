use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema violation: {0}")]
    Schema(String),

    /// Historical accesses that are not backed by any permission.
    #[error("accesses without a matching permission: {}", format_pairs(.0))]
    AccessNotPermitted(Vec<(String, String)>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("instance too large for exhaustive enumeration: {bits} decision bits (limit {limit})")]
    InstanceTooLarge { bits: usize, limit: usize },

    #[error("missing embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("no feasible policy found within the budget: {0}")]
    NoSolution(String),
}

fn format_pairs(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .map(|(u, d)| format!("({u}, {d})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Parse {
            what: what.into(),
            source,
        }
    }
}
