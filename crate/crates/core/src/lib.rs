//! Direct and inverse acoustic scattering by star-shaped obstacles using
//! outgoing spherical-wave expansions whose boundary residual is driven
//! below a target by least squares.
//!
//! * [`direct`]: adaptive boundary-residual minimization for soft and hard obstacles.
//! * [`inverse`]: boundary reconstruction from near-field data on a sphere.
//! * [`oracle`]: exact separated-variables solution for the sphere.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod direct;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod inverse;
pub mod io;
pub mod oracle;
pub mod specfun;

pub use direct::{BoundaryCondition, CoefficientSet, DirectSolution, LeastSquaresSolution, SolverConfig, WaveContext};
pub use error::{MrcError, Result};
pub use geometry::{Direction, SphereQuadrature, StarSurface, SurfaceShape};
pub use inverse::{NearFieldData, NearFieldEntry, RayRoot, ReconstructedSurface, ReconstructionConfig};
pub use specfun::ModeIndex;

pub use nalgebra::Vector3;
pub use num_complex::Complex64;
