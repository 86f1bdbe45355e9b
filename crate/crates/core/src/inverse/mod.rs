//! The regularized data-misfit objective, its exact discrete-adjoint
//! gradient, and the quasi-Newton recovery loop.
//!
//! The objective couples a state misfit against vertex observations with
//! three boundary regularizers,
//!
//! ```text
//! J(D, g) = sum_i (u_{j(i)} - z_i)' M (u_{j(i)} - z_i)
//!         + sum_j w_j [ a/2 g_j' M_G g_j + c_r/2 g_j' K_Gr g_j + c_b/2 g_j' K_Gb g_j ]
//!         + b/(2 dt) sum_{j>=1} (g_j - g_{j-1})' M_G (g_j - g_{j-1})
//! ```
//!
//! with trapezoidal weights `w_0 = w_k = dt/2` and `w_j = dt` otherwise, and
//! the gradient-penalty weight split between the two Dirichlet surfaces
//! (`c_r` on the outer surface, `c_b = 0.01 c_r` on the ventricle wall).
//! States obey the backward-Euler recursion of [`crate::forward`], so the
//! gradient below is the exact derivative of the discrete objective: the
//! adjoint runs the same recursion backwards and collects boundary fluxes at
//! the Dirichlet rows.

mod lbfgs;
mod sweep;

pub use lbfgs::{minimize, OptimizeOpts, OptimizeReport};
pub use sweep::{sweep, sweep_csv, SweepBase, SweepCell, SweepGrid, SweepRow, SWEEP_CSV_HEADER};

use crate::error::{Error, Result};
use crate::fem::{pcg, AssembledSystem, SparseMatrix};
use crate::forward::{check_control, forward_solve_tol, BoundaryControl, ControlState, StateSeries};
use crate::synthetic::{relative_errors, RelativeErrors};

/// Non-negative regularization weights. `gamma_tilde` is the referenced
/// gradient weight; it acts in full on the outer surface and at 1% on the
/// ventricle wall.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_tilde: f64,
}

impl RegParams {
    pub fn new(alpha: f64, beta: f64, gamma_tilde: f64) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || gamma_tilde < 0.0 {
            return Err(Error::Invalid("regularization weights must be non-negative".into()));
        }
        Ok(RegParams {
            alpha,
            beta,
            gamma_tilde,
        })
    }

    pub fn gamma_sas(&self) -> f64 {
        self.gamma_tilde
    }

    pub fn gamma_ventricle(&self) -> f64 {
        0.01 * self.gamma_tilde
    }
}

/// Vertex-valued concentration fields at strictly increasing times.
#[derive(Clone, Debug)]
pub struct ObservationSeries {
    times: Vec<f64>,
    fields: Vec<Vec<f64>>,
}

impl ObservationSeries {
    pub fn new(times: Vec<f64>, fields: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != fields.len() {
            return Err(Error::Invalid("one field per observation time required".into()));
        }
        if times.is_empty() {
            return Err(Error::Invalid("empty observation series".into()));
        }
        if times[0] < 0.0 {
            return Err(Error::Invalid("observation times must be non-negative".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("observation times must be strictly increasing".into()));
        }
        for f in &fields {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("observation field contains NaN or infinity".into()));
            }
        }
        Ok(ObservationSeries { times, fields })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[Vec<f64>] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Nearest step index for each observation on a `(dt, k)` grid. Fails if
    /// a time falls outside `[0, k dt]`.
    pub fn snap_indices(&self, dt: f64, k: usize) -> Result<Vec<usize>> {
        let horizon = k as f64 * dt;
        let mut snap = Vec::with_capacity(self.times.len());
        for &tau in &self.times {
            if tau > horizon * (1.0 + 1e-12) {
                return Err(Error::Invalid(format!(
                    "observation time {tau} outside [0, {horizon}]"
                )));
            }
            snap.push(((tau / dt).round() as usize).min(k));
        }
        Ok(snap)
    }

    pub fn scaled(&self, c: f64) -> Self {
        ObservationSeries {
            times: self.times.clone(),
            fields: self
                .fields
                .iter()
                .map(|f| f.iter().map(|v| v * c).collect())
                .collect(),
        }
    }
}

/// Gradient of the objective with respect to the raw controls.
#[derive(Clone, Debug)]
pub struct ControlGradient {
    /// dJ/dD per subdomain, ordered like the system labels.
    pub diffusion: Vec<f64>,
    /// dJ/dg, same shape as the boundary control.
    pub g: BoundaryControl,
}

/// One fully specified inversion: mesh system, initial state, observations,
/// weights and time grid.
#[derive(Debug)]
pub struct InverseProblem<'a> {
    pub system: &'a AssembledSystem,
    pub initial: Vec<f64>,
    pub observations: ObservationSeries,
    pub reg: RegParams,
    pub dt: f64,
    pub steps: usize,
    /// Relative residual for the inner linear solves.
    pub lin_tol: f64,
    snap: Vec<usize>,
    surface_mass: SparseMatrix,
}

impl<'a> InverseProblem<'a> {
    pub fn new(
        system: &'a AssembledSystem,
        initial: Vec<f64>,
        observations: ObservationSeries,
        reg: RegParams,
        dt: f64,
        steps: usize,
        lin_tol: f64,
    ) -> Result<Self> {
        if initial.len() != system.num_vertices {
            return Err(Error::Invalid("initial state length mismatch".into()));
        }
        if !(dt.is_finite() && dt > 0.0) || steps == 0 {
            return Err(Error::Invalid("need a positive time step and step count".into()));
        }
        for f in observations.fields() {
            if f.len() != system.num_vertices {
                return Err(Error::Invalid("observation field length mismatch".into()));
            }
        }
        let snap = observations.snap_indices(dt, steps)?;
        let surface_mass = system.surface_mass_total();
        Ok(InverseProblem {
            system,
            initial,
            observations,
            reg,
            dt,
            steps,
            lin_tol,
            snap,
            surface_mass,
        })
    }

    /// Step index each observation is matched against.
    pub fn snap(&self) -> &[usize] {
        &self.snap
    }

    pub fn forward(&self, control: &ControlState) -> Result<StateSeries> {
        forward_solve_tol(
            self.system,
            control,
            &self.initial,
            self.dt,
            self.steps,
            self.lin_tol,
        )
    }

    pub fn objective(&self, control: &ControlState) -> Result<f64> {
        let series = self.forward(control)?;
        Ok(self.misfit(&series) + self.regularization(&control.g))
    }

    fn misfit(&self, series: &StateSeries) -> f64 {
        let mut j = 0.0;
        for (i, field) in self.observations.fields().iter().enumerate() {
            let u = &series.states[self.snap[i]];
            let diff: Vec<f64> = u.iter().zip(field).map(|(a, b)| a - b).collect();
            j += self.system.mass.bilinear(&diff, &diff);
        }
        j
    }

    fn regularization(&self, g: &BoundaryControl) -> f64 {
        let k = self.steps;
        let dt = self.dt;
        let mut j = 0.0;
        for row in 0..=k {
            let w = if row == 0 || row == k { dt / 2.0 } else { dt };
            let gj = g.row(row);
            j += w * 0.5 * self.reg.alpha * self.surface_mass.bilinear(gj, gj);
            j += w
                * 0.5
                * self.reg.gamma_sas()
                * self.system.surface_stiffness_sas.bilinear(gj, gj);
            j += w
                * 0.5
                * self.reg.gamma_ventricle()
                * self.system.surface_stiffness_vent.bilinear(gj, gj);
        }
        for row in 1..=k {
            let diff: Vec<f64> = g
                .row(row)
                .iter()
                .zip(g.row(row - 1))
                .map(|(a, b)| a - b)
                .collect();
            j += 0.5 * self.reg.beta / dt * self.surface_mass.bilinear(&diff, &diff);
        }
        j
    }

    /// Objective value and its exact gradient for the discrete problem.
    pub fn objective_and_gradient(&self, control: &ControlState) -> Result<(f64, ControlGradient)> {
        check_control(self.system, control, self.steps)?;
        let sys = self.system;
        let k = self.steps;
        let nd = sys.num_dirichlet();
        let series = self.forward(control)?;
        let value = self.misfit(&series) + self.regularization(&control.g);

        // Misfit residuals 2 M (u_j - z_i), grouped per snapped step.
        let mut obs_at: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
        for (i, &j) in self.snap.iter().enumerate() {
            obs_at[j].push(i);
        }
        let residual = |j: usize| -> Option<Vec<f64>> {
            if obs_at[j].is_empty() {
                return None;
            }
            let mut acc = vec![0.0; sys.num_vertices];
            for &i in &obs_at[j] {
                let z = &self.observations.fields()[i];
                let diff: Vec<f64> = series.states[j].iter().zip(z).map(|(a, b)| a - b).collect();
                let m_diff = sys.mass.apply(&diff);
                for (a, b) in acc.iter_mut().zip(&m_diff) {
                    *a += 2.0 * b;
                }
            }
            Some(acc)
        };

        let a = sys.time_matrix(&control.diffusion, self.dt);
        let a_ff = sys.free_submatrix(&a);
        let cap = 10 * a_ff.dimension.max(1);

        let mut grad_d = vec![0.0; control.diffusion.len()];
        let mut grad_g = BoundaryControl::zeros(k + 1, nd);

        // Backward adjoint sweep. lambda lives on free vertices; at step j it
        // feeds the g-gradient rows j (through A) and j-1 (through M).
        let mut lambda_next: Option<Vec<f64>> = None;
        for j in (1..=k).rev() {
            let mut rhs = vec![0.0; a_ff.dimension];
            if let Some(r) = residual(j) {
                for (slot, &v) in rhs.iter_mut().zip(sys.free_vertices()) {
                    *slot = -r[v];
                }
            }
            if let Some(prev) = &lambda_next {
                let m_prev = sys.mass.apply(&sys.embed_free(prev));
                for (slot, &v) in rhs.iter_mut().zip(sys.free_vertices()) {
                    *slot += m_prev[v];
                }
            }
            let lambda = pcg(&a_ff, &rhs, lambda_next.as_deref(), self.lin_tol, cap)?.solution;
            let lambda_full = sys.embed_free(&lambda);

            for (s, ks) in sys.stiffness.iter().enumerate() {
                let ku = ks.apply(&series.states[j]);
                let mut acc = 0.0;
                for (l, &v) in lambda.iter().zip(sys.free_vertices()) {
                    acc += l * ku[v];
                }
                grad_d[s] += self.dt * acc;
            }

            let a_lambda = a.apply(&lambda_full);
            for (slot, (v, _)) in grad_g.row_mut(j).iter_mut().zip(&sys.dirichlet) {
                *slot += a_lambda[*v];
            }
            let m_lambda = sys.mass.apply(&lambda_full);
            for (slot, (v, _)) in grad_g.row_mut(j - 1).iter_mut().zip(&sys.dirichlet) {
                *slot -= m_lambda[*v];
            }
            lambda_next = Some(lambda);
        }

        // Direct dependence of the misfit on Dirichlet values.
        for j in 0..=k {
            if let Some(r) = residual(j) {
                for (slot, (v, _)) in grad_g.row_mut(j).iter_mut().zip(&sys.dirichlet) {
                    *slot += r[*v];
                }
            }
        }

        // Regularization terms.
        for j in 0..=k {
            let w = if j == 0 || j == k { self.dt / 2.0 } else { self.dt };
            let gj = control.g.row(j).to_vec();
            let m_g = self.surface_mass.apply(&gj);
            let kr_g = sys.surface_stiffness_sas.apply(&gj);
            let kb_g = sys.surface_stiffness_vent.apply(&gj);
            let row = grad_g.row_mut(j);
            for d in 0..nd {
                row[d] += w
                    * (self.reg.alpha * m_g[d]
                        + self.reg.gamma_sas() * kr_g[d]
                        + self.reg.gamma_ventricle() * kb_g[d]);
            }
        }
        let scale = self.reg.beta / self.dt;
        if scale > 0.0 {
            for j in 1..=k {
                let diff: Vec<f64> = control
                    .g
                    .row(j)
                    .iter()
                    .zip(control.g.row(j - 1))
                    .map(|(a, b)| a - b)
                    .collect();
                let m_diff = self.surface_mass.apply(&diff);
                for (d, &v) in m_diff.iter().enumerate() {
                    grad_g.row_mut(j)[d] += scale * v;
                    grad_g.row_mut(j - 1)[d] -= scale * v;
                }
            }
        }

        Ok((
            value,
            ControlGradient {
                diffusion: grad_d,
                g: grad_g,
            },
        ))
    }
}

/// Result of one optimization run.
#[derive(Clone, Debug)]
pub struct InverseResult {
    pub control: ControlState,
    pub objective_history: Vec<f64>,
    pub gradient_norm_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative errors against the supplied truth, when given.
    pub errors: Option<RelativeErrors>,
}

/// Default initial guess: 1 mm²/h in tissue, 100 mm²/h in CSF, zero boundary
/// data.
pub fn default_initial_control(system: &AssembledSystem, steps: usize) -> ControlState {
    let diffusion = system
        .labels
        .iter()
        .map(|&l| if l == crate::mesh::SUBDOMAIN_CSF { 100.0 } else { 1.0 })
        .collect();
    ControlState {
        diffusion,
        g: BoundaryControl::zeros(steps + 1, system.num_dirichlet()),
    }
}

/// Minimizes the objective over `(log D, g)` with limited-memory BFGS.
///
/// The log parameterization keeps every diffusion coefficient positive. When
/// `truth` is given, the result carries relative recovery errors.
pub fn optimize(
    problem: &InverseProblem,
    init: &ControlState,
    opts: &OptimizeOpts,
    truth: Option<&ControlState>,
) -> Result<InverseResult> {
    check_control(problem.system, init, problem.steps)?;
    let n_d = init.diffusion.len();
    let nd = problem.system.num_dirichlet();
    let rows = problem.steps + 1;

    let pack = |c: &ControlState| -> Vec<f64> {
        let mut x = Vec::with_capacity(n_d + rows * nd);
        x.extend(c.diffusion.iter().map(|d| d.ln()));
        x.extend_from_slice(c.g.as_slice());
        x
    };
    let unpack = |x: &[f64]| -> ControlState {
        ControlState {
            diffusion: x[..n_d].iter().map(|l| l.exp()).collect(),
            g: BoundaryControl::from_flat(rows, nd, x[n_d..].to_vec()).unwrap(),
        }
    };

    let report = minimize(
        |x, need_grad| {
            let control = unpack(x);
            if need_grad {
                let (value, grad) = problem.objective_and_gradient(&control)?;
                let mut gx = Vec::with_capacity(x.len());
                for (gd, d) in grad.diffusion.iter().zip(&control.diffusion) {
                    gx.push(gd * d); // chain rule through D = exp(log D)
                }
                gx.extend_from_slice(grad.g.as_slice());
                Ok((value, Some(gx)))
            } else {
                Ok((problem.objective(&control)?, None))
            }
        },
        pack(init),
        opts,
    )?;

    let control = unpack(&report.x);
    let errors = match truth {
        Some(t) => Some(relative_errors(problem.system, &control, t, problem.dt)?),
        None => None,
    };
    Ok(InverseResult {
        control,
        objective_history: report.objective_history,
        gradient_norm_history: report.gradient_norm_history,
        iterations: report.iterations,
        converged: report.converged,
        errors,
    })
}
