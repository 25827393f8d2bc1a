use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be ≥ 3 (got {0}); the Green function diverges below three dimensions")]
    DimensionTooSmall(usize),

    #[error("dimension {d} exceeds the configured ceiling {ceiling}")]
    DimensionAboveCeiling { d: usize, ceiling: usize },

    #[error("tolerance must be positive (got {0})")]
    NonPositiveTolerance(f64),

    #[error("site {site} has sup-norm {norm}, beyond the Green table radius {radius}")]
    OutsideTable { site: String, norm: u32, radius: u32 },

    #[error("site dimension {found} does not match {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("finite set must be nonempty")]
    EmptySet,

    #[error("set spans sup-distance {span}, beyond the Green table radius {radius}")]
    SetBeyondTable { span: u32, radius: u32 },

    #[error("Green matrix is numerically singular (pivot {pivot} = {value:e})")]
    SingularMatrix { pivot: usize, value: f64 },

    #[error("equilibrium measure has entry {value:e} below the tolerance -1e-10; the Green table is too inaccurate")]
    NegativeEquilibrium { value: f64 },

    #[error("hitting probability is numerically zero at {site}")]
    VanishingHitting { site: String },

    #[error("{site} lies in the target set; the conditioned walk is only defined off it")]
    InsideTarget { site: String },

    #[error("escape shell of radius {shell} needs Green values up to {needed}, table radius is {radius}")]
    ShellBeyondTable { shell: u32, needed: u32, radius: u32 },

    #[error("window boundary has {size} sites, above the exact-kernel limit {limit}; use the truncate method")]
    KernelTooLarge { size: usize, limit: usize },

    #[error("truncation bias {epsilon:e} is not achievable within kill radius {max_radius}")]
    EpsilonUnreachable { epsilon: f64, max_radius: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("green table cache {path}: {reason}")]
    Cache { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
