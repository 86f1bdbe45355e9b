//! Recovery of per-subdomain apparent diffusion coefficients and a
//! time-varying boundary concentration from sparse tracer observations.
//!
//! The crate couples a P1 finite-element diffusion solver on labelled
//! tetrahedral meshes with a discrete-adjoint gradient and a limited-memory
//! quasi-Newton loop, plus the supporting machinery the workflow needs:
//! synthetic phantoms and manufactured observations for verification, the
//! MPRAGE signal → concentration conversion, DTI-derived tortuosity and ADC
//! estimates, and voxel-grid preprocessing of boundary data.
//!
//! Units: coordinates in mm, time in hours, diffusion in mm²/h inside the
//! transport solver (mm²/s in the DTI module), concentrations in mM.

pub mod concentration;
pub mod dti;
pub mod error;
pub mod fem;
pub mod forward;
pub mod inverse;
pub mod mesh;
pub mod synthetic;
pub mod voxel;

pub use error::{Error, Result};
pub use fem::{assemble, AssembledSystem, MassLumping, SparseMatrix};
pub use forward::{
    forward_solve, forward_solve_tol, BoundaryControl, ControlState, StateSeries,
    DEFAULT_LIN_TOL, MM2_PER_H_IN_MM2_PER_S,
};
pub use inverse::{
    default_initial_control, optimize, InverseProblem, InverseResult, ObservationSeries,
    OptimizeOpts, RegParams,
};
pub use mesh::{generate_phantom, Marker, Mesh, PhantomVariant, VertexField};
pub use synthetic::{
    make_synthetic_observations, manufactured_control, manufactured_g, relative_errors, NoiseSpec,
};
pub use voxel::VoxelGrid;
