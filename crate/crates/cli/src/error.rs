#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: marketdyn::Error,
    },

    #[error(transparent)]
    Core(#[from] marketdyn::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 1 for bad input, 2 for a computation failing on valid input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Usage(_) => 1,
            Self::Stage { source, .. } | Self::Core(source) => {
                if source.is_validation() {
                    1
                } else {
                    2
                }
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Core(e.into())
    }
}
