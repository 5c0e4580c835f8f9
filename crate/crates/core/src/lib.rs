//! L1 time-stepping for time-fractional parabolic problems
//!
//! Solves `D_t^α u + L u = f` for `α ∈ (0,1)` with the L1 discretisation of the
//! Caputo derivative on graded temporal meshes `t_j = T (j/M)^r`. Spatial
//! operators are either the standard finite-difference `L_h` on `(0,1)^d` or
//! lumped-mass P1 finite elements on 2D triangulations.
//!
//! The crate also carries the verification machinery: stability certificates
//! for the discrete fractional operator, convergence sweeps with rate
//! estimation, and table emitters.
//!
//! With the default `parallel` feature, history sums, assembly and randomized
//! check suites run on rayon; without it every kernel runs sequentially with
//! identical results.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis_checks;
pub mod caputo_l1;
pub mod error;
pub mod exec;
pub mod fd_space;
pub mod fem_space;
pub mod harness;
pub mod linalg;
pub mod scalar_solver;
pub mod special_fn;
pub mod temporal_mesh;
pub mod time_stepper;

pub use caputo_l1::{L1Operator, Summation};
pub use error::{Error, Result};
pub use exec::ExecPolicy;
pub use temporal_mesh::TemporalMesh;
