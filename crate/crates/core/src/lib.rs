//! Trajectory repair in the Frenet frame: B-spline trajectories, obstacle
//! conflicts, two-stage repair optimization and a binary search for the
//! latest repair start time that still yields a feasible trajectory.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archetypes;
pub mod bspline;
pub mod cli;
pub mod costs;
pub mod cspace;
pub mod export;
pub mod fttr;
pub mod optimizer;
pub mod repair;
pub mod scenario;
