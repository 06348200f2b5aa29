use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("rule file line {line}: {message}")]
    RuleSyntax { line: usize, message: String },

    #[error("invalid rule set: {0}")]
    InvalidRules(String),

    #[error("empty reference: CER is undefined when N = 0")]
    EmptyReference,

    #[error("{0} is empty")]
    EmptyInput(&'static str),

    #[error("total line length is zero")]
    ZeroTotalLength,

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid augmentation spec: {0}")]
    InvalidAugmentation(String),

    #[error("invalid decode config: {0}")]
    InvalidDecodeConfig(String),

    #[error("invalid scorer: {0}")]
    InvalidScorer(String),

    #[error("scorer provides no token representations; use greedy decoding instead")]
    MissingRepresentations,

    #[error("invalid tokenizer: {0}")]
    InvalidTokenizer(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by invalid input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Image(image::ImageError::IoError(_)) => true,
            _ => false,
        }
    }
}
