//! Finite element solver for a three-dimensional nonlinear radiation-conduction
//! model in anisotropic media, discretized with the SP3 moment closure.
//!
//! The temperature field is coupled to two radiative moments through a pair of
//! elliptic equations. Space is discretized with mixed `P_p`/`P_{p-1}` Lagrange
//! elements on conforming tetrahedral meshes, time with a two-stage
//! explicit/implicit predictor-corrector scheme. A manufactured-solution
//! harness measures convergence orders in space and time.

pub mod assembly;
pub mod config;
pub mod elements;
pub mod harness;
pub mod integrator;
pub mod mesh;
pub mod mms;
pub mod model;
pub mod solver;
pub mod spaces;
pub mod vtk;

pub use mesh::TetMesh;
pub use model::{ConductivityModel, PhysicalParams};
pub use spaces::{FemField, FemSpace};
