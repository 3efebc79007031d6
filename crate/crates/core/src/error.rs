use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied data of the wrong shape or out of its domain.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Matrix could not be factorized even after jitter escalation.
    #[error("{what}: matrix not positive definite (final jitter {jitter:e})")]
    Numeric { what: String, jitter: f64 },

    #[error("ensemble member {member} diverged: {reason}")]
    Training { member: usize, reason: String },

    #[error("simulation produced a non-finite state: {0}")]
    Simulation(String),

    #[error("planning failed for candidate {candidate}: {source}")]
    Planning {
        candidate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
