use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular control: r2 must be strictly positive, got {0}")]
    SingularControl(f64),

    #[error("numerical rank deficiency: {0}")]
    RankDeficient(String),

    #[error("inner descent produced a non-finite loss at iteration {iter}")]
    InnerDivergence { iter: usize },

    #[error("simulation diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },

    #[error("time {s} outside the signal domain [{start}, {end}]")]
    Domain { s: f64, start: f64, end: f64 },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config serialization error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
