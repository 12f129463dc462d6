use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("empty segment: {0}")]
    EmptySegment(String),
    #[error("poisoned update: {0}")]
    PoisonedUpdate(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Strips stage labels and returns the innermost error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: impl Into<String>) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage: stage.into(),
            source: Box::new(e),
        })
    }
}
