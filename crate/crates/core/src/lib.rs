//! Stationary linearized Boltzmann transport in bounded convex domains.
//!
//! The governing equation `z . grad f = -nu(|z|) f + K(f)` is handled in its
//! damped-transport integral form along backward characteristics. The crate
//! provides:
//!
//! - [`kernel`]: the cutoff collision model (frequency `nu`, model kernel
//!   `k`, smoothing operator `K`, decay integrals);
//! - [`geometry`]: exact ray-exit geometry for convex bodies plus randomized
//!   checks of the chord/parallax inequalities;
//! - [`transport`]: the Picard solver for the integral equation, the
//!   once-iterated decomposition into boundary, once-collided and
//!   twice-collided terms, and the space-parametrized collision-source
//!   integral;
//! - [`analysis`]: weighted norms, empirical Hoelder-modulus estimation, and
//!   decay/gain-of-integrability checks;
//! - [`scenario`]: config-driven batch runs emitting JSON/CSV reports.

pub mod analysis;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod quadrature;
pub mod scenario;
pub mod transport;

pub use error::{Error, Result};
pub use geometry::{BoundaryPoint, ConvexDomain, Point, Velocity};
pub use kernel::{CollisionKernel, PotentialModel, VelocityQuadrature};
