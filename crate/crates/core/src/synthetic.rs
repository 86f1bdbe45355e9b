//! Manufactured ground truth, noise injection and error metrics for
//! verifying the inverse solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::AssembledSystem;
use crate::forward::{forward_solve_tol, BoundaryControl, ControlState, DEFAULT_LIN_TOL};
use crate::inverse::ObservationSeries;

/// Uniform vertex noise in `(-amplitude, amplitude)`, reproducible per seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub amplitude: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            amplitude: 0.0,
            seed: 0,
        }
    }

    /// Standard deviation of the uniform noise, `amplitude / sqrt(3)`.
    pub fn sigma(&self) -> f64 {
        self.amplitude / 3.0f64.sqrt()
    }
}

/// The boundary concentration used for manufactured runs (mM), valid on
/// `0 <= t <= 24` hours: `0.3 + 0.167 t - 0.007 t^2`.
pub fn manufactured_g(t: f64) -> f64 {
    0.3 + 0.167 * t - 0.007 * t * t
}

/// A control whose boundary rows sample [`manufactured_g`] at the step times
/// of the `(dt, k)` grid.
pub fn manufactured_control(system: &AssembledSystem, diffusion: Vec<f64>, dt: f64, k: usize) -> ControlState {
    ControlState {
        diffusion,
        g: BoundaryControl::from_rows(k + 1, system.num_dirichlet(), |j, _| {
            manufactured_g(j as f64 * dt)
        }),
    }
}

/// Synthetic observations from a forward run with known controls.
///
/// Starts from `u0 = 0`, integrates to `t_final` on the `dt_gen` grid with
/// the manufactured boundary data, samples `n_obs` evenly spaced times
/// (`i * t_final / n_obs`, snapped to the generation grid) and adds uniform
/// noise per vertex. Noise streams derive from `(seed, observation index)`,
/// so generation order does not matter.
pub fn make_synthetic_observations(
    system: &AssembledSystem,
    d_true: &[f64],
    dt_gen: f64,
    n_obs: usize,
    t_final: f64,
    noise: &NoiseSpec,
) -> Result<ObservationSeries> {
    if n_obs < 2 {
        return Err(Error::Invalid("need at least 2 observations".into()));
    }
    if noise.amplitude < 0.0 {
        return Err(Error::Invalid("noise amplitude must be non-negative".into()));
    }
    let k_gen = (t_final / dt_gen).round() as usize;
    if k_gen == 0 || ((k_gen as f64 * dt_gen) - t_final).abs() > 1e-9 * t_final {
        return Err(Error::Invalid(format!(
            "generation step {dt_gen} does not tile the horizon {t_final}"
        )));
    }
    let control = manufactured_control(system, d_true.to_vec(), dt_gen, k_gen);
    let u0 = vec![0.0; system.num_vertices];
    let series = forward_solve_tol(system, &control, &u0, dt_gen, k_gen, DEFAULT_LIN_TOL)?;

    let mut times = Vec::with_capacity(n_obs);
    let mut fields = Vec::with_capacity(n_obs);
    for i in 1..=n_obs {
        let tau = i as f64 * t_final / n_obs as f64;
        let j = (tau / dt_gen).round() as usize;
        let j = j.min(k_gen);
        let mut field = series.states[j].clone();
        if noise.amplitude > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(i as u64);
            for v in field.iter_mut() {
                *v += rng.gen_range(-noise.amplitude..noise.amplitude);
            }
        }
        times.push(j as f64 * dt_gen);
        fields.push(field);
    }
    ObservationSeries::new(times, fields)
}

/// Signal-to-noise ratio of one observation: region-mean noiseless signal
/// magnitude over the uniform-noise standard deviation. Returns infinity for
/// zero amplitude.
pub fn snr(noiseless: &[f64], region: &[bool], noise: &NoiseSpec) -> f64 {
    if noise.amplitude == 0.0 {
        return f64::INFINITY;
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (v, &inside) in noiseless.iter().zip(region) {
        if inside {
            acc += v.abs();
            count += 1;
        }
    }
    if count == 0 {
        return 0.0;
    }
    (acc / count as f64) / noise.sigma()
}

/// Signed per-subdomain diffusion errors and the relative boundary error.
#[derive(Clone, Debug)]
pub struct RelativeErrors {
    /// `(D_rec - D_true) / D_true`, ordered like the system labels.
    pub d_rel: Vec<f64>,
    /// `|g_rec - g_true| / |g_true|` in the discrete L2 norm over the
    /// Dirichlet surface and the time horizon (trapezoidal in time).
    pub g_rel: f64,
}

/// Compares a recovered control against the truth on the same `(dt, k)` grid.
pub fn relative_errors(
    system: &AssembledSystem,
    recovered: &ControlState,
    truth: &ControlState,
    dt: f64,
) -> Result<RelativeErrors> {
    if recovered.diffusion.len() != truth.diffusion.len()
        || recovered.g.rows() != truth.g.rows()
        || recovered.g.dofs() != truth.g.dofs()
    {
        return Err(Error::Invalid("control shapes do not match".into()));
    }
    let d_rel = recovered
        .diffusion
        .iter()
        .zip(&truth.diffusion)
        .map(|(r, t)| (r - t) / t)
        .collect();

    let m_surf = system.surface_mass_total();
    let rows = truth.g.rows();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..rows {
        let w = if j == 0 || j == rows - 1 { dt / 2.0 } else { dt };
        let diff: Vec<f64> = recovered
            .g
            .row(j)
            .iter()
            .zip(truth.g.row(j))
            .map(|(r, t)| r - t)
            .collect();
        num += w * m_surf.bilinear(&diff, &diff);
        den += w * m_surf.bilinear(truth.g.row(j), truth.g.row(j));
    }
    let g_rel = if den > 0.0 {
        (num / den).sqrt()
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(RelativeErrors { d_rel, g_rel })
}
