//! Limited-memory BFGS with Armijo backtracking.
//!
//! Two-loop recursion (memory 10 by default) over a caller-supplied
//! objective/gradient callback. The callback is asked for the gradient only
//! when a step has been accepted; plain objective evaluations drive the line
//! search.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct OptimizeOpts {
    /// History pairs kept by the two-loop recursion.
    pub memory: usize,
    /// Stop when `|grad|_inf <= rtol * max(1, |grad_0|_inf)`.
    pub rtol: f64,
    pub max_iterations: usize,
    /// Line-search halvings before giving up.
    pub max_halvings: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c1: f64,
}

impl Default for OptimizeOpts {
    fn default() -> Self {
        OptimizeOpts {
            memory: 10,
            rtol: 1e-6,
            max_iterations: 500,
            max_halvings: 50,
            armijo_c1: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeReport {
    pub x: Vec<f64>,
    pub objective_history: Vec<f64>,
    pub gradient_norm_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `eval`, which returns the objective and (when asked) the
/// gradient. Returns the best iterate found; `converged = false` when the
/// line search stalls or the iteration cap is hit.
pub fn minimize<F>(mut eval: F, x0: Vec<f64>, opts: &OptimizeOpts) -> Result<OptimizeReport>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Option<Vec<f64>>)>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, g) = eval(&x, true)?;
    let mut g = g.expect("gradient requested");
    let g0_inf = inf_norm(&g);
    let tol = opts.rtol * g0_inf.max(1.0);

    let mut objective_history = vec![f];
    let mut gradient_norm_history = vec![g0_inf];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    let mut iterations = 0;
    let mut converged = inf_norm(&g) <= tol;

    while !converged && iterations < opts.max_iterations {
        let mut p = two_loop(&g, &pairs);
        let mut slope = dot(&p, &g);
        if !(slope < 0.0) {
            // Not a descent direction (stale curvature); restart steepest.
            pairs.clear();
            p = g.iter().map(|v| -v).collect();
            slope = dot(&p, &g);
            if slope == 0.0 {
                break;
            }
        }

        let mut t = if pairs.is_empty() {
            1.0 / norm(&g).max(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + t * pi).collect();
            // Evaluation failures (overflowing trial points, solver
            // breakdown) just reject the step.
            let ft = match eval(&trial, false) {
                Ok((ft, _)) => ft,
                Err(_) => f64::INFINITY,
            };
            if ft.is_finite() && ft <= f + opts.armijo_c1 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            // Line-search failure: keep the best point seen so far.
            return Ok(OptimizeReport {
                x,
                objective_history,
                gradient_norm_history,
                iterations,
                converged: false,
            });
        };

        let (_, g_new) = eval(&x_new, true)?;
        let g_new = g_new.expect("gradient requested");
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            let rho = 1.0 / sy;
            pairs.push_back((s, y, rho));
        }

        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        objective_history.push(f);
        let gi = inf_norm(&g);
        gradient_norm_history.push(gi);
        converged = gi <= tol;
        debug_assert_eq!(x.len(), n);
    }

    Ok(OptimizeReport {
        x,
        objective_history,
        gradient_norm_history,
        iterations,
        converged,
    })
}

fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
