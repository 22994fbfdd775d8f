//! Joint scheduling of coupled power, water and district-heating networks.
//!
//! `model` holds the scenario, `physics` evaluates the exact nonconvex model,
//! `convexify` and `conic` build and solve the convex subproblems, `scheduler`
//! coordinates them and `analysis` runs the post-hoc studies.

pub mod analysis;
pub mod conic;
pub mod convexify;
pub mod model;
pub mod physics;
pub mod scheduler;
