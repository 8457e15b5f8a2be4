//! Error type shared by the whole crate.

use thiserror::Error;

/// Errors produced by the adaptation core.
#[derive(Debug, Error)]
pub enum IdeaError {
    /// Bad argument values: dimension mismatches, non-finite entries,
    /// malformed probability vectors, and similar contract violations.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Bridge assembly requested on an empty asset library.
    #[error("empty asset library")]
    EmptyLibrary,

    /// The regularized normal matrix stayed numerically singular through the
    /// whole jitter escalation ladder.
    #[error("degenerate bridge problem: {0}")]
    DegenerateProblem(String),

    /// Prompt optimization could not produce any finite iterate.
    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    /// Asset file carries a format version this build does not understand.
    #[error("unsupported asset file version: {0}")]
    UnsupportedVersion(String),

    /// Asset file parsed but its contents are internally inconsistent.
    #[error("corrupt asset library: {0}")]
    CorruptLibrary(String),

    /// Asset file is not well-formed text.
    #[error("asset file parse error: {0}")]
    Parse(String),

    /// A step inside an episode failed; indices identify where.
    #[error("episode {episode}, step {step}: {source}")]
    Step {
        episode: usize,
        step: usize,
        #[source]
        source: Box<IdeaError>,
    },
}

pub type Result<T> = std::result::Result<T, IdeaError>;

impl IdeaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        IdeaError::InvalidInput(msg.into())
    }
}
