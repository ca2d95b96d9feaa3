use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("mesh too coarse for the pixel grid: {0}")]
    MeshTooCoarse(String),

    #[error("invalid phantom: {0}")]
    Phantom(String),

    #[error("invalid conductivity: {0}")]
    Conductivity(String),

    /// The stiffness system could not be factorized.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid measurement frame: {0}")]
    Frame(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `|V| + delta I` is not positive definite; delta is too small.
    #[error("cholesky factorization failed: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not symmetric (asymmetry {asymmetry:e}, norm {norm:e})")]
    NotSymmetric { asymmetry: f64, norm: f64 },

    #[error("sensitivity matrix not negative semi-definite (largest eigenvalue {largest:e}, norm {norm:e})")]
    NotNegativeSemiDefinite { largest: f64, norm: f64 },

    #[error("definiteness certificate failed: smallest eigenvalue {smallest:e}")]
    Certificate { smallest: f64 },

    #[error("ill-conditioned system: condition estimate {0:e}")]
    IllConditioned(f64),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// The innermost error, with stage labels stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Whether the failure came from the numerics rather than from inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Singular(_)
                | Error::NotPositiveDefinite(_)
                | Error::NotSymmetric { .. }
                | Error::NotNegativeSemiDefinite { .. }
                | Error::Certificate { .. }
                | Error::IllConditioned(_)
                | Error::NonFinite(_)
                | Error::MeshTooCoarse(_)
        )
    }
}
