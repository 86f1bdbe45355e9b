//! Backward-Euler time integration of the subdomain-wise diffusion equation
//! with time-varying Dirichlet data.
//!
//! Each step solves `(M + dt K(D)) u_j = M u_{j-1}` with the Dirichlet rows
//! eliminated symmetrically: known boundary columns move to the right-hand
//! side and the reduced free-free block stays SPD for conjugate gradients.

use crate::error::{Error, Result};
use crate::fem::{pcg, AssembledSystem};

/// Default relative residual for the inner linear solves.
pub const DEFAULT_LIN_TOL: f64 = 1e-10;

/// Reporting conversion: 1 mm²/h in mm²/s.
pub const MM2_PER_H_IN_MM2_PER_S: f64 = 1.0 / 3600.0;

/// Time-indexed Dirichlet values: row `j` holds the boundary data at step
/// `j`, ordered like `AssembledSystem::dirichlet`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryControl {
    rows: usize,
    dofs: usize,
    values: Vec<f64>,
}

impl BoundaryControl {
    pub fn zeros(rows: usize, dofs: usize) -> Self {
        BoundaryControl {
            rows,
            dofs,
            values: vec![0.0; rows * dofs],
        }
    }

    pub fn from_rows(rows: usize, dofs: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * dofs);
        for j in 0..rows {
            for d in 0..dofs {
                values.push(f(j, d));
            }
        }
        BoundaryControl { rows, dofs, values }
    }

    pub fn from_flat(rows: usize, dofs: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dofs {
            return Err(Error::Invalid(format!(
                "boundary control needs {} values, got {}",
                rows * dofs,
                values.len()
            )));
        }
        Ok(BoundaryControl { rows, dofs, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dofs(&self) -> usize {
        self.dofs
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.dofs..(j + 1) * self.dofs]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.dofs..(j + 1) * self.dofs]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= c;
        }
        out
    }
}

/// The optimization unknowns: one diffusion coefficient (mm²/h) per present
/// subdomain plus the Dirichlet boundary table.
#[derive(Clone, Debug)]
pub struct ControlState {
    /// Ordered like `AssembledSystem::labels`.
    pub diffusion: Vec<f64>,
    pub g: BoundaryControl,
}

/// States `u_0 .. u_k` of one forward solve.
#[derive(Clone, Debug)]
pub struct StateSeries {
    pub mesh_id: u64,
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
}

impl StateSeries {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|j| j as f64 * self.dt).collect()
    }
}

/// Runs `k` backward-Euler steps from `u0`.
///
/// `u0` is taken as given on free vertices; its Dirichlet entries are
/// overwritten by row 0 of the control.
pub fn forward_solve(
    system: &AssembledSystem,
    control: &ControlState,
    u0: &[f64],
    dt: f64,
    k: usize,
) -> Result<StateSeries> {
    forward_solve_tol(system, control, u0, dt, k, DEFAULT_LIN_TOL)
}

/// [`forward_solve`] with an explicit linear-solver tolerance.
pub fn forward_solve_tol(
    system: &AssembledSystem,
    control: &ControlState,
    u0: &[f64],
    dt: f64,
    k: usize,
    lin_tol: f64,
) -> Result<StateSeries> {
    check_control(system, control, k)?;
    if u0.len() != system.num_vertices {
        return Err(Error::Invalid(format!(
            "initial state has {} values for {} vertices",
            u0.len(),
            system.num_vertices
        )));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("initial state contains NaN or infinity".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Invalid("time step must be positive".into()));
    }

    let a = system.time_matrix(&control.diffusion, dt);
    let a_ff = system.free_submatrix(&a);
    let cap = 10 * a_ff.dimension.max(1);

    let mut states = Vec::with_capacity(k + 1);
    let mut current = u0.to_vec();
    for ((v, _), &g) in system.dirichlet.iter().zip(control.g.row(0)) {
        current[*v] = g;
    }
    states.push(current.clone());

    let mut warm = system.restrict_free(&current);
    for j in 1..=k {
        let rhs_full = system.mass.apply(&current);
        let g_full = system.embed_dirichlet(control.g.row(j));
        let a_g = a.apply(&g_full);
        let rhs: Vec<f64> = system
            .free_vertices()
            .iter()
            .map(|&v| rhs_full[v] - a_g[v])
            .collect();
        let out = pcg(&a_ff, &rhs, Some(&warm), lin_tol, cap)?;
        warm = out.solution;
        current = system.embed_free(&warm);
        for ((v, _), &g) in system.dirichlet.iter().zip(control.g.row(j)) {
            current[*v] = g;
        }
        states.push(current.clone());
    }
    Ok(StateSeries {
        mesh_id: system.mesh_id,
        dt,
        states,
    })
}

pub(crate) fn check_control(
    system: &AssembledSystem,
    control: &ControlState,
    k: usize,
) -> Result<()> {
    if control.diffusion.len() != system.labels.len() {
        return Err(Error::Invalid(format!(
            "{} diffusion coefficients for {} subdomains",
            control.diffusion.len(),
            system.labels.len()
        )));
    }
    if control.diffusion.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::Invalid("diffusion coefficients must be positive".into()));
    }
    if control.g.dofs() != system.num_dirichlet() {
        return Err(Error::Invalid(format!(
            "boundary control has {} dofs for {} Dirichlet vertices",
            control.g.dofs(),
            system.num_dirichlet()
        )));
    }
    if control.g.rows() != k + 1 {
        return Err(Error::Invalid(format!(
            "boundary control has {} rows for {} steps",
            control.g.rows(),
            k + 1
        )));
    }
    if control.g.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("boundary control contains NaN or infinity".into()));
    }
    Ok(())
}
