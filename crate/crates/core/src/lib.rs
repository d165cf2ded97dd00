//! Optimal control with commensurable discrete delays in state and control.
//!
//! The crate lifts a delayed problem onto a lattice of step `h` (with
//! `r = h·k`, `s = h·l`) to an equivalent stacked problem without delays,
//! simulates both forms, solves desk-scale instances by single shooting, and
//! checks the delayed Hamilton–Jacobi sufficient condition for a candidate.

pub mod cli;
pub mod corpus;
pub mod exprdsl;
pub mod lift;
pub mod model;
pub mod simsteps;
pub mod sufficiency;
pub mod transcribe;
