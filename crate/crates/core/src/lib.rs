//! Implicit finite element / discontinuous Galerkin scheme for the isentropic
//! compressible Navier–Stokes equations on tetrahedral box meshes.
//!
//! Density is piecewise constant, velocity is Crouzeix–Raviart with no-slip
//! boundary dofs, and each time step solves the fully coupled nonlinear system
//! with a homotopy-continued semismooth Newton method.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod fluxes;
pub mod mesh;
pub mod presets;
pub mod quadrature;
pub mod scheme;
pub mod solver;
pub mod spaces;
pub mod sparse;
pub mod verify;
pub mod vtk;

pub use diagnostics::{DiagnosticsRow, EnergyLedger, StepRecorder};
pub use error::{Error, Result, StepFailure};
pub use mesh::{build_box_mesh, mesh_metrics, BoxDomain, Mesh, MeshMetrics, Vec3};
pub use presets::{Preset, PresetKind};
pub use scheme::{run, step_count, time_step, SchemeParams, State, Trajectory};
pub use solver::{HomotopySettings, SolveStats};
pub use spaces::{ScalarQField, VelocityCRField};
pub use sparse::CsrMatrix;
