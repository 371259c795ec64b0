//! Best approximation of sharp-layer functions in B-spline finite element
//! spaces of arbitrary degree and continuity, with optional oscillation
//! (Gibbs) constraints enforced on subdomain partitions.
//!
//! The crate is organized around six modules:
//!
//! * [`spline_space`] — open-knot B-spline spaces on affine boxes, basis and
//!   derivative evaluation, mesh bookkeeping.
//! * [`quadrature`] — Gauss–Legendre rules, element and interface-skeleton
//!   integration, layer-graded rules for sharp targets.
//! * [`projectors`] — unconstrained L², H¹₀ and interior-penalty best
//!   approximations and the Gram systems behind them.
//! * [`gibbs`] — total variation, exact and regularized Gibbs functionals,
//!   their derivatives, and subdomain partitions.
//! * [`solver`] — the constrained best approximation problem solved through
//!   an augmented-Lagrangian / quasi-Newton loop with direct shortcuts.
//! * [`experiments`] — config-driven, reproducible experiment runs with CSV
//!   and JSON outputs, exposed through the `gibbsfree` CLI.

pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod projectors;
pub mod quadrature;
pub mod solver;
pub mod spline_space;
pub mod target;

pub use error::{Error, Result};
pub use spline_space::{DofFunction, Side, SplineSpace};
pub use target::TargetFn;
