use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integration blew up at t = {time}: |q_{mode}| = {value:e} exceeds bound {bound:e}")]
    BlowUp {
        time: f64,
        mode: usize,
        value: f64,
        bound: f64,
    },

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("model is not trained")]
    NotTrained,

    #[error("training failed: {0}")]
    Training(String),

    #[error("episode {episode} failed at t = {time}: {source}")]
    Episode {
        episode: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
