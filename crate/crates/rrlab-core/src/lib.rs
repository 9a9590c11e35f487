//! Exact-arithmetic laboratory for rank-one cutting-and-stacking systems.
//!
//! The crate builds rank-one measure-preserving transformations as interval
//! towers with exact rational endpoints, represents their self-joinings
//! through explicit fiber disintegrations, and checks quantitative tower and
//! operator estimates as exact rational inequalities: Koopman-power
//! combinations approximating the Markov operator of a joining, with
//! Kantorovich-Rubinstein distances computed in closed form.
//!
//! Module map:
//!
//! - [`rational`], [`interval_set`], [`functions`], [`measure`]: the exact
//!   numeric substrate (no floating point anywhere in computations).
//! - [`system`]: descriptors and the cutting-and-stacking build.
//! - [`twoadic`]: dyadic digit arithmetic for odometer translations.
//! - [`towers`]: tower statistics, rigidity conditions, level diagnostics.
//! - [`joinings`]: closed-form self-joinings and their fiber measures.
//! - [`metrics`]: Kantorovich-Rubinstein distances on the line and the square.
//! - [`approx`]: coefficient profiles, base-point selection, Koopman
//!   combinations, and the operator-error audits.
//! - [`experiments`]: experiment configs, CSV emission, descriptor files.

// Errors carry the offending exact values; their size is immaterial at the
// call rates of a desk-scale laboratory.
#![allow(clippy::result_large_err)]

pub mod approx;
pub mod experiments;
pub mod functions;
pub mod interval_set;
pub mod joinings;
pub mod measure;
pub mod metrics;
pub mod rational;
pub mod system;
pub mod towers;
pub mod twoadic;

pub use interval_set::{set_algebra, IntervalSet, SetOp};
pub use rational::Rat;
pub use system::{build, BuiltSystem, ConstructionDescriptor};
