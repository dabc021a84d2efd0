//! Numerical tensor tomography on simple Riemannian discs.
//!
//! The crate is organised bottom-up: [`domain`] and [`metric`] describe the
//! geometry, [`geodesic`] traces rays, [`fields`], [`calculus`] and
//! [`elliptic`] provide tensor calculus and the Dirichlet solver,
//! [`ray_transform`] and [`normal`] implement the transform and its normal
//! operator, and [`stability`] hosts the experiment harnesses.

pub mod calculus;
pub mod domain;
pub mod elliptic;
pub mod error;
pub mod fan;
pub mod fields;
pub mod geodesic;
pub mod grid;
pub mod metric;
pub mod normal;
pub mod phantoms;
pub mod ray_transform;
pub mod simplicity;
pub mod stability;
pub mod symbol;
pub mod two_point;

pub use domain::{Circle, Domain, NodeRegion, Point, Region};
pub use error::{Error, Result};
pub use metric::{Bump, MetricField, MetricKind, ScalarFn};

/// Crate version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
