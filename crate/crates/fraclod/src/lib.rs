//! Multiscale finite elements on fractal interface networks.
//!
//! The crate builds two-dimensional interface networks (a deterministic
//! highly localized family and a seeded random geological family), broken
//! P1 finite element spaces with duplicated interface degrees of freedom,
//! weighted jump-penalty bilinear forms, projection operators between
//! scales, LOD-style multiscale bases, and the two-level subspace
//! correction solver whose convergence factors the experiment harness
//! reproduces.
//!
//! Modules follow the pipeline order:
//!
//! * [`geometry`] — interface networks, cell partitions, geometric constants
//! * [`mesh`] — uniform red-refinement triangulations of the unit square
//! * [`femspace`] — broken P1 spaces and inter-scale prolongation
//! * [`assembly`] — gradient/jump/mass/load assembly and norms
//! * [`linsolve`] — CG, sparse LDL^T factorization, constrained solves
//! * [`projections`] — the per-cell projection and Clément averaging stack
//! * [`lod`] — ideal and localized correctors, multiscale Galerkin solves
//! * [`twolevel`] — block Gauss-Seidel + coarse-space iteration, experiments
//! * [`harness`] — configuration, run orchestration, reports, SVG output

pub mod assembly;
pub mod error;
pub mod femspace;
pub mod geometry;
pub mod harness;
pub mod linsolve;
pub mod lod;
pub mod mesh;
pub mod projections;
pub mod sparse;
pub mod twolevel;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
