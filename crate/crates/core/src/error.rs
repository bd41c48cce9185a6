use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("size {requested} exceeds the configured limit of {limit} for {what}")]
    CapExceeded {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("expected a {expected} sequence, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("normalizing factor vanishes; the normalized pairing is undefined")]
    ZeroNormalization,

    #[error("kernel set is invalid: {0}")]
    InvalidKernels(String),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("io/format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_cap(what: &'static str, requested: usize, limit: usize) -> Result<()> {
    if requested > limit {
        Err(Error::CapExceeded {
            what,
            requested,
            limit,
        })
    } else {
        Ok(())
    }
}
