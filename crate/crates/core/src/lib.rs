//! Construction, rigidity analysis and numerical flexion of flexible octahedra.
//!
//! The crate is layered bottom-up:
//!
//! * [`spherical_linkage`] is the input/output equation of an articulated
//!   tetrahedral angle (a spherical four-bar).
//! * [`octa_model`] fixes the octahedral combinatorics and measures
//!   realizations.
//! * [`builders`] constructs the three families of flexible octahedra.
//! * [`flexion`] does rigidity analysis and follows flexes by continuation.
//! * [`verifiers`] checks classical theorems along realized paths.
//! * [`cli_io`] is the job format, the exporters and the command runner.

// `!(x > tol)` is deliberate: it is true for NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builders;
pub mod cli_io;
pub mod flexion;
pub mod octa_model;
pub mod sampling;
pub mod spherical_linkage;
pub mod verifiers;

mod intersect;

/// Point or vector in 3-space.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Point in the plane.
pub type Vec2 = nalgebra::Vector2<f64>;
