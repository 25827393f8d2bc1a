//! Simulation toolkit for random interlacements on Z^d: lattice Green function,
//! discrete potential theory, exact window sampling and the estimators built on it.

pub mod analytics;
pub mod coarse;
pub mod error;
pub mod excursion;
pub mod green;
pub mod lattice;
pub mod linalg;
pub mod potential;
pub mod sampler;
pub mod trials;

pub use error::{Error, Result};
pub use green::GreenTable;
pub use lattice::{BoxRegion, Dim, Site};
pub use potential::{FiniteSet, PotentialData};
pub use sampler::{OccupancyField, SamplerMethod, TraceSample, WindowSampler};
