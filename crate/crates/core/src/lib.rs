//! Two-well incompressible microstructure toolkit.
//!
//! * [`matcore`]: 2×2 algebra, conformal splitting, distances to rotation cosets.
//! * [`wellsgeo`]: rank-one connections, the two-well set and its hulls,
//!   laminate decomposition, and the SO(3) connectivity scan.
//! * [`energy`]: Dirichlet and two-well energies, the grid convex envelope,
//!   convexity probes.
//! * [`laminate`]: laminate deformation fields with affine boundary data.
//! * [`minimizer`]: penalized incompressible descent and affineness certificates.

pub mod energy;
pub mod error;
pub mod laminate;
pub mod matcore;
pub mod mesh;
pub mod minimizer;
pub mod numeric;
pub mod wellsgeo;

pub use error::{Error, Result};
pub use matcore::{Mat2, Mat3, Vec2};
pub use wellsgeo::TwoWellParams;
