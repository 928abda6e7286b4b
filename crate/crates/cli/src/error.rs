use blinkpipe::dataset::DatasetError;
use blinkpipe::net::NetError;
use blinkpipe::proto::WireError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { path, source } => CliError::Io {
                context: path.display().to_string(),
                source,
            },
            DatasetError::TooFewParticipants(n) => CliError::Data(format!(
                "found {n} participant(s); training needs at least 3 so that train, validation and test \
                 sets are participant-disjoint (simulate more with `simulate --participants 10`)"
            )),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Io(source) => CliError::Io {
                context: "checkpoint".into(),
                source,
            },
            NetError::BadCheckpoint(_) | NetError::EmptySplit | NetError::ShapeMismatch { .. } => {
                CliError::Data(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<WireError> for CliError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::Io(source) => CliError::Io {
                context: "connection".into(),
                source,
            },
            other => CliError::Data(other.to_string()),
        }
    }
}
