//! Backward-in-time finite-difference solver for the nonlinear pricing
//! equation with its solution-dependent hedge coupling.
//!
//! Marching backward from the terminal payoff, each step solves
//!
//! ```text
//! df/dt + (mu + lambda eta - rho j) S df/dS + 1/2 (sigma + lambda zeta)^2 S^2 d2f/dS2
//!       + rho [ f(t, S J) - f(t, S) ] - r f - (mu - r + lambda eta) theta S = 0,
//! ```
//!
//! where `J = 1 + j` is the shared jump factor and `theta` is the closed-form
//! variance-minimizing hedge evaluated from the surface itself. The local part
//! (drift, diffusion, discounting) is implicit and solved as one tridiagonal
//! system per step; the nonlocal jump term stays explicit at the already-known
//! time level; the hedge coupling is refreshed from the current iterate by
//! Picard iteration within each step. With `a = b = 0`, `lambda = 0` this is
//! a plain implicit Black–Scholes solver, which is the oracle-checked
//! reduction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hedge::{theta_star, HedgeContext};
use crate::model::{
    jump_factor_parts, payoff_eval, validate_params_on_nodes, ModelError, ModelParams, Payoff,
};
use crate::simulate::{self_consistent_zeta, ClosureMode, StrategyClosure};
use crate::surface::{d_ds, Grid2d};
use crate::util::hash_serializable;

/// Picard stopping rule: sup-norm change below `1e-10 * payoff scale`.
const PICARD_TOL_FACTOR: f64 = 1e-10;
const PICARD_MAX_ITER: usize = 50;
/// Fixed-point rule for the self-consistent diffusion loading.
const ZETA_TOL: f64 = 1e-10;
const ZETA_MAX_ITER: usize = 100;

#[derive(Debug, Error)]
pub enum PideError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model validation failed with {count} violations, first: {first}")]
    Validation { count: usize, first: String },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("explicit jump term unstable: rho * dt = {rho_dt} >= 1")]
    ExplicitJumpUnstable { rho_dt: f64 },
    #[error("scheme instability at t={t}: minimum value {min_value} under the -1e-8*scale floor")]
    Unstable { t: f64, min_value: f64 },
    #[error("non-finite value produced at t={t}")]
    NonFinite { t: f64 },
}

/// Uniform rectangular grid request.
///
/// With `align_strike` set (the default) the spacing is adjusted so the
/// strike falls exactly on a node, removing the payoff-kink quadrature error;
/// the effective truncation price becomes the smallest aligned value at or
/// above `s_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub s_max: f64,
    pub n_space: usize,
    pub n_time: usize,
    #[serde(default = "default_true")]
    pub align_strike: bool,
}

fn default_true() -> bool {
    true
}

impl GridSpec {
    /// Default resolution with the truncation rule `S_max = 3 K`.
    pub fn default_for_strike(strike: f64) -> Self {
        GridSpec {
            s_max: 3.0 * strike,
            n_space: 400,
            n_time: 400,
            align_strike: true,
        }
    }
}

/// Per-solve iteration diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PideDiagnostics {
    pub total_picard_iterations: usize,
    pub max_picard_iterations: usize,
    /// Steps where the Picard loop hit its cap; the solver warns through this
    /// counter and continues with the last iterate.
    pub picard_nonconverged_steps: usize,
    pub worst_final_picard_delta: f64,
    pub max_zeta_iterations: usize,
    pub zeta_nonconverged_steps: usize,
}

/// Option value `f(t, S)` and hedge `theta(t, S)` on the full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSurface {
    pub f: Grid2d,
    pub theta: Grid2d,
    pub payoff: Payoff,
    pub grid: GridSpec,
    /// Effective spacing after strike alignment.
    pub ds: f64,
    pub dt: f64,
    /// Hash tying this surface to `(params, closure, payoff, grid)`.
    pub params_hash: u64,
    pub diagnostics: PideDiagnostics,
}

impl PriceSurface {
    /// Option value located by grid interpolation.
    pub fn price_at(&self, t: f64, s: f64) -> f64 {
        self.f.interp(t, s)
    }
}

/// Canonical hash of everything a solve depends on.
pub fn hash_solver_inputs(
    params: &ModelParams,
    closure: &StrategyClosure,
    payoff: &Payoff,
    grid: &GridSpec,
) -> u64 {
    #[derive(Serialize)]
    struct SolverInputs<'a> {
        params: &'a ModelParams,
        closure: &'a StrategyClosure,
        payoff: &'a Payoff,
        grid: &'a GridSpec,
    }
    hash_serializable(&SolverInputs {
        params,
        closure,
        payoff,
        grid,
    })
}

fn build_s_nodes(grid: &GridSpec, payoff: &Payoff) -> Result<(Vec<f64>, f64), PideError> {
    if !(grid.s_max.is_finite() && grid.s_max > 0.0) {
        return Err(PideError::InvalidGrid(
            "s_max must be finite and > 0".into(),
        ));
    }
    if grid.n_space < 3 {
        return Err(PideError::InvalidGrid("n_space must be >= 3".into()));
    }
    if grid.n_time < 1 {
        return Err(PideError::InvalidGrid("n_time must be >= 1".into()));
    }
    let ds = match (grid.align_strike, payoff.strike()) {
        (true, Some(k)) => {
            if k >= grid.s_max {
                return Err(PideError::InvalidGrid("strike must lie below s_max".into()));
            }
            let m = (k * grid.n_space as f64 / grid.s_max).floor() as usize;
            if m < 1 {
                return Err(PideError::InvalidGrid(
                    "strike too small for this grid to align".into(),
                ));
            }
            k / m as f64
        }
        _ => grid.s_max / grid.n_space as f64,
    };
    let nodes = (0..=grid.n_space).map(|i| i as f64 * ds).collect();
    Ok((nodes, ds))
}

/// Row value at an arbitrary price, with the deep-in-the-money asymptote
/// `S - K * disc` extending calls beyond the truncation boundary.
fn sample_extended(
    row: &[f64],
    ds: f64,
    s_max: f64,
    payoff: &Payoff,
    disc: f64,
    s_target: f64,
) -> f64 {
    if s_target <= 0.0 {
        return row[0];
    }
    if s_target >= s_max {
        return match payoff {
            Payoff::EuropeanCall { strike } => s_target - strike * disc,
            _ => row[row.len() - 1],
        };
    }
    let x = s_target / ds;
    let i0 = (x as usize).min(row.len() - 2);
    let w = x - i0 as f64;
    row[i0] + w * (row[i0 + 1] - row[i0])
}

struct LevelCoefficients {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    r: Vec<f64>,
    lambda: Vec<f64>,
    eta: Vec<f64>,
}

fn eval_level(
    params: &ModelParams,
    closure: &StrategyClosure,
    t: f64,
    s_nodes: &[f64],
) -> LevelCoefficients {
    let n = s_nodes.len();
    let mut c = LevelCoefficients {
        mu: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
        r: Vec::with_capacity(n),
        lambda: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
    };
    for &s in s_nodes {
        c.mu.push(params.mu.eval(t, s));
        c.sigma.push(params.sigma.eval(t, s));
        c.r.push(params.r.eval(t, s));
        c.lambda.push(params.lambda_impact.eval(t, s));
        c.eta.push(closure.eta.eval(t, s));
    }
    c
}

/// Hedge values for one row, from the row itself: slope by central
/// differences (second-order one-sided at the edges), jump-displaced value by
/// interpolation with the boundary asymptote.
#[allow(clippy::too_many_arguments)]
fn theta_from_row(
    params: &ModelParams,
    coefs: &LevelCoefficients,
    s_nodes: &[f64],
    ds: f64,
    f_row: &[f64],
    zeta_row: &[f64],
    payoff: &Payoff,
    disc: f64,
) -> Vec<f64> {
    let s_max = s_nodes[s_nodes.len() - 1];
    let f_s = d_ds(f_row, ds);
    let mut theta = Vec::with_capacity(s_nodes.len());
    for (i, &s) in s_nodes.iter().enumerate() {
        if s <= 0.0 {
            theta.push(f_s[i]);
            continue;
        }
        let zeta = zeta_row[i];
        let factor = jump_factor_parts(params.a, params.b, coefs.sigma[i], coefs.lambda[i], zeta);
        let f_jumped = sample_extended(f_row, ds, s_max, payoff, disc, s * factor);
        let ctx = HedgeContext {
            s,
            f: f_row[i],
            f_s: f_s[i],
            f_jumped,
            sigma: coefs.sigma[i],
            lambda: coefs.lambda[i],
            zeta,
            a: params.a,
            b: params.b,
            rho: params.rho,
        };
        // A degenerate denominator can only come from lambda*zeta cancelling
        // sigma with no jump channel left; fall back to the delta there.
        theta.push(theta_star(&ctx).unwrap_or(f_s[i]));
    }
    theta
}

/// Inner fixed point `zeta = sigma S theta_S / (1 - lambda S theta_S)` given
/// the current value row; applies 0.5 damping when the update oscillates.
/// Returns `(zeta_row, theta_row, iterations, converged)`.
#[allow(clippy::too_many_arguments)]
fn zeta_fixed_point(
    params: &ModelParams,
    coefs: &LevelCoefficients,
    s_nodes: &[f64],
    ds: f64,
    f_row: &[f64],
    zeta_init: &[f64],
    payoff: &Payoff,
    disc: f64,
) -> (Vec<f64>, Vec<f64>, usize, bool) {
    let mut zeta = zeta_init.to_vec();
    let mut theta = theta_from_row(params, coefs, s_nodes, ds, f_row, &zeta, payoff, disc);
    let mut prev_delta = f64::INFINITY;
    for iter in 1..=ZETA_MAX_ITER {
        let theta_s = d_ds(&theta, ds);
        let mut delta: f64 = 0.0;
        let mut next = vec![0.0; zeta.len()];
        for (i, &s) in s_nodes.iter().enumerate() {
            next[i] = self_consistent_zeta(coefs.sigma[i], coefs.lambda[i], s, theta_s[i]);
            delta = delta.max((next[i] - zeta[i]).abs());
        }
        if delta > prev_delta {
            for (z_next, z_old) in next.iter_mut().zip(&zeta) {
                *z_next = 0.5 * (*z_next + z_old);
            }
            delta *= 0.5;
        }
        prev_delta = delta;
        zeta = next;
        theta = theta_from_row(params, coefs, s_nodes, ds, f_row, &zeta, payoff, disc);
        if delta < ZETA_TOL {
            return (zeta, theta, iter, true);
        }
    }
    (zeta, theta, ZETA_MAX_ITER, false)
}

/// Thomas algorithm; `sub[i]`, `diag[i]`, `sup[i]` address row `i`, with
/// `sub[0]` and `sup[n-1]` unused.
fn solve_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &[f64],
    out: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
) {
    let n = rhs.len();
    out.clear();
    out.resize(n, 0.0);
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut beta = diag[0];
    out[0] = rhs[0] / beta;
    for i in 1..n {
        scratch[i] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * scratch[i];
        out[i] = (rhs[i] - sub[i] * out[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        let next = out[i + 1];
        out[i] -= scratch[i + 1] * next;
    }
}

/// Checks every model invariant across the exact grid a solve would use,
/// with the strategy closure supplying the diffusion loading per node.
///
/// In self-consistent mode the loading is solution-dependent, so it is
/// probed at zero here and the realized jump factor is re-checked while
/// stepping.
pub fn validate_setup(
    params: &ModelParams,
    closure: &StrategyClosure,
    grid: &GridSpec,
    payoff: &Payoff,
) -> Result<crate::model::ValidationReport, PideError> {
    params.validate_fields()?;
    payoff.validate()?;
    let (s_nodes, _) = build_s_nodes(grid, payoff)?;
    let dt = params.t_max / grid.n_time as f64;
    let t_nodes: Vec<f64> = (0..=grid.n_time).map(|j| j as f64 * dt).collect();
    let report = match closure.mode {
        ClosureMode::Exogenous => {
            validate_params_on_nodes(params, &t_nodes, &s_nodes, |t, s| closure.zeta.eval(t, s))?
        }
        ClosureMode::SelfConsistentDiffusion => {
            validate_params_on_nodes(params, &t_nodes, &s_nodes, |_, _| 0.0)?
        }
    };
    Ok(report)
}

/// Solves the pricing equation backward from the terminal payoff and returns
/// the value and hedge surfaces on the full grid.
pub fn solve_pide(
    params: &ModelParams,
    closure: &StrategyClosure,
    grid: &GridSpec,
    payoff: &Payoff,
) -> Result<PriceSurface, PideError> {
    let report = validate_setup(params, closure, grid, payoff)?;
    if !report.is_ok() {
        return Err(PideError::Validation {
            count: report.violations.len(),
            first: report.violations[0].to_string(),
        });
    }
    let (s_nodes, ds) = build_s_nodes(grid, payoff)?;
    let dt = params.t_max / grid.n_time as f64;
    let t_nodes: Vec<f64> = (0..=grid.n_time).map(|j| j as f64 * dt).collect();
    let rho_dt = params.rho * dt;
    if rho_dt >= 1.0 {
        return Err(PideError::ExplicitJumpUnstable { rho_dt });
    }

    let n = grid.n_space;
    let m = grid.n_time;
    let s_max = s_nodes[n];
    let mut f = Grid2d::zeros(t_nodes.clone(), s_nodes.clone());
    let mut theta = Grid2d::zeros(t_nodes.clone(), s_nodes.clone());
    let mut diagnostics = PideDiagnostics::default();

    // Terminal condition is assigned exactly.
    let mut terminal = Vec::with_capacity(n + 1);
    for &s in &s_nodes {
        terminal.push(payoff_eval(payoff, s)?);
    }
    let scale = payoff
        .strike()
        .unwrap_or_else(|| terminal.iter().cloned().fold(1.0, f64::max));
    let picard_tol = PICARD_TOL_FACTOR * scale;
    f.row_mut(m).copy_from_slice(&terminal);

    // Terminal hedge row and the initial diffusion loading.
    let coefs_term = eval_level(params, closure, t_nodes[m], &s_nodes);
    let (zeta_term, theta_term) = match closure.mode {
        ClosureMode::Exogenous => {
            let z: Vec<f64> = s_nodes
                .iter()
                .map(|&s| closure.zeta.eval(t_nodes[m], s))
                .collect();
            let th = theta_from_row(
                params,
                &coefs_term,
                &s_nodes,
                ds,
                &terminal,
                &z,
                payoff,
                1.0,
            );
            (z, th)
        }
        ClosureMode::SelfConsistentDiffusion => {
            let init = vec![0.0; n + 1];
            let (z, th, iters, converged) = zeta_fixed_point(
                params,
                &coefs_term,
                &s_nodes,
                ds,
                &terminal,
                &init,
                payoff,
                1.0,
            );
            diagnostics.max_zeta_iterations = diagnostics.max_zeta_iterations.max(iters);
            if !converged {
                diagnostics.zeta_nonconverged_steps += 1;
            }
            (z, th)
        }
    };
    theta.row_mut(m).copy_from_slice(&theta_term);
    let mut zeta_prev = zeta_term;

    // Backward discount factors at the two boundaries, implicit-Euler style
    // so boundary rows track the interior scheme's own discounting.
    let mut disc_low = 1.0f64;
    let mut disc_high = 1.0f64;
    let payoff_at_zero = payoff_eval(payoff, 0.0)?;

    let mut rhs = vec![0.0; n - 1];
    let mut sub = vec![0.0; n - 1];
    let mut diag = vec![0.0; n - 1];
    let mut sup = vec![0.0; n - 1];
    let mut solution = Vec::with_capacity(n - 1);
    let mut scratch = Vec::with_capacity(n - 1);

    for j in (0..m).rev() {
        let t = t_nodes[j];
        let coefs = eval_level(params, closure, t, &s_nodes);
        let disc_high_next = disc_high;
        disc_low /= 1.0 + coefs.r[0] * dt;
        disc_high /= 1.0 + coefs.r[n] * dt;
        let lower_bv = payoff_at_zero * disc_low;
        let upper_bv = match payoff {
            Payoff::EuropeanCall { strike } => s_max - strike * disc_high,
            _ => payoff_eval(payoff, s_max)? * disc_high,
        };

        let f_next: Vec<f64> = f.row(j + 1).to_vec();
        let mut f_cur = f_next.clone();
        let mut zeta_row: Vec<f64> = match closure.mode {
            ClosureMode::Exogenous => s_nodes.iter().map(|&s| closure.zeta.eval(t, s)).collect(),
            ClosureMode::SelfConsistentDiffusion => zeta_prev.clone(),
        };
        let mut theta_row;
        let mut converged = false;
        let mut iters = 0usize;
        let mut last_delta;

        loop {
            iters += 1;
            // Refresh the hedge coupling (and, in self-consistent mode, the
            // diffusion loading) from the current iterate.
            match closure.mode {
                ClosureMode::Exogenous => {
                    theta_row = theta_from_row(
                        params, &coefs, &s_nodes, ds, &f_cur, &zeta_row, payoff, disc_high,
                    );
                }
                ClosureMode::SelfConsistentDiffusion => {
                    let (z, th, z_iters, z_conv) = zeta_fixed_point(
                        params, &coefs, &s_nodes, ds, &f_cur, &zeta_row, payoff, disc_high,
                    );
                    diagnostics.max_zeta_iterations = diagnostics.max_zeta_iterations.max(z_iters);
                    if !z_conv {
                        diagnostics.zeta_nonconverged_steps += 1;
                    }
                    zeta_row = z;
                    theta_row = th;
                }
            }

            // Assemble the implicit operator and the explicit terms.
            for i in 1..n {
                let zeta = zeta_row[i];
                let sigma_eff = coefs.sigma[i] + coefs.lambda[i] * zeta;
                let jump_load = params.a * coefs.sigma[i] + params.b * coefs.lambda[i] * zeta;
                let factor = 1.0 + jump_load;
                if params.rho > 0.0 && factor <= 0.0 {
                    return Err(PideError::Model(ModelError::NonPositiveJumpFactor {
                        factor,
                        t,
                        s: s_nodes[i],
                        zeta,
                    }));
                }
                let drift = coefs.mu[i] + coefs.lambda[i] * coefs.eta[i] - params.rho * jump_load;
                let alpha = 0.5 * sigma_eff * sigma_eff * (i * i) as f64;
                let beta = 0.5 * drift * i as f64;
                // Central differencing where it keeps the M-matrix sign
                // pattern, first-order upwinding otherwise.
                let (lo, mid, hi) = if alpha >= beta.abs() {
                    (alpha - beta, -2.0 * alpha - coefs.r[i], alpha + beta)
                } else if drift >= 0.0 {
                    let adv = drift * i as f64;
                    (alpha, -2.0 * alpha - adv - coefs.r[i], alpha + adv)
                } else {
                    let adv = drift * i as f64;
                    (alpha - adv, -2.0 * alpha + adv - coefs.r[i], alpha)
                };
                sub[i - 1] = -dt * lo;
                diag[i - 1] = 1.0 - dt * mid;
                sup[i - 1] = -dt * hi;

                // Nonlocal term from the known time level, hedge term from
                // the current iterate.
                let jump_term = if params.rho > 0.0 {
                    let displaced = sample_extended(
                        &f_next,
                        ds,
                        s_max,
                        payoff,
                        disc_high_next,
                        s_nodes[i] * factor,
                    );
                    params.rho * (displaced - f_next[i])
                } else {
                    0.0
                };
                let hedge_term = -(coefs.mu[i] - coefs.r[i] + coefs.lambda[i] * coefs.eta[i])
                    * theta_row[i]
                    * s_nodes[i];
                rhs[i - 1] = f_next[i] + dt * (jump_term + hedge_term);
            }
            rhs[0] -= sub[0] * lower_bv;
            rhs[n - 2] -= sup[n - 2] * upper_bv;
            solve_tridiagonal(&sub, &diag, &sup, &rhs, &mut solution, &mut scratch);

            let mut delta: f64 = 0.0;
            for i in 1..n {
                delta = delta.max((solution[i - 1] - f_cur[i]).abs());
            }
            delta = delta
                .max((lower_bv - f_cur[0]).abs())
                .max((upper_bv - f_cur[n]).abs());
            f_cur[0] = lower_bv;
            f_cur[n] = upper_bv;
            f_cur[1..n].copy_from_slice(&solution);
            last_delta = delta;
            if delta < picard_tol {
                converged = true;
                break;
            }
            if iters >= PICARD_MAX_ITER {
                break;
            }
        }
        diagnostics.total_picard_iterations += iters;
        diagnostics.max_picard_iterations = diagnostics.max_picard_iterations.max(iters);
        if !converged {
            diagnostics.picard_nonconverged_steps += 1;
            diagnostics.worst_final_picard_delta =
                diagnostics.worst_final_picard_delta.max(last_delta);
        }

        // Monotonicity probe: values must stay finite and no more negative
        // than the scheme tolerance.
        let mut min_value = f64::INFINITY;
        for &v in f_cur.iter() {
            if !v.is_finite() {
                return Err(PideError::NonFinite { t });
            }
            min_value = min_value.min(v);
        }
        if min_value < -1e-8 * scale {
            return Err(PideError::Unstable { t, min_value });
        }

        // Store the converged row and a hedge recomputed from it, so the two
        // stored surfaces are mutually consistent.
        let theta_final = theta_from_row(
            params, &coefs, &s_nodes, ds, &f_cur, &zeta_row, payoff, disc_high,
        );
        f.row_mut(j).copy_from_slice(&f_cur);
        theta.row_mut(j).copy_from_slice(&theta_final);
        zeta_prev = zeta_row;
    }

    Ok(PriceSurface {
        f,
        theta,
        payoff: payoff.clone(),
        grid: grid.clone(),
        ds,
        dt,
        params_hash: hash_solver_inputs(params, closure, payoff, grid),
        diagnostics,
    })
}

/// Outcome of the no-jump hedge reduction check.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReductionReport {
    /// Max over interior nodes of `|theta - central-difference df/dS|`.
    pub max_gap: f64,
    /// `5 * ds * max |d2f/dS2|`, the discretization-error budget.
    pub bound: f64,
    pub max_second_derivative: f64,
    pub ds: f64,
}

impl DeltaReductionReport {
    pub fn passes(&self) -> bool {
        self.max_gap <= self.bound
    }
}

/// Verifies on a solved surface that the stored hedge agrees with the central
/// finite difference of the value surface at interior nodes. With `a = b = 0`
/// the closed form is algebraically the delta, so only floating-point noise
/// remains; with jumps switched on the gap is finite (negative control).
pub fn delta_reduction_check(surface: &PriceSurface) -> DeltaReductionReport {
    let n_time = surface.f.n_time();
    let n_space = surface.f.n_space();
    let ds = surface.ds;
    let mut max_gap: f64 = 0.0;
    let mut max_f_ss: f64 = 0.0;
    for j in 0..n_time {
        let row = surface.f.row(j);
        let f_s = d_ds(row, ds);
        for i in 1..n_space - 1 {
            let gap = (surface.theta.at(j, i) - f_s[i]).abs();
            max_gap = max_gap.max(gap);
            let f_ss = (row[i + 1] - 2.0 * row[i] + row[i - 1]) / (ds * ds);
            max_f_ss = max_f_ss.max(f_ss.abs());
        }
    }
    DeltaReductionReport {
        max_gap,
        bound: 5.0 * ds * max_f_ss,
        max_second_derivative: max_f_ss,
        ds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefficientFn;
    use crate::oracles::{black_scholes_price, BsInputs};
    use crate::simulate::StrategyClosure;

    fn params(mu: f64, rho: f64, a: f64, lambda: f64) -> ModelParams {
        ModelParams {
            mu: CoefficientFn::constant(mu),
            sigma: CoefficientFn::constant(0.2),
            r: CoefficientFn::constant(0.05),
            lambda_impact: CoefficientFn::constant(lambda),
            rho,
            a,
            b: 0.0,
            s0: 100.0,
            theta0: 0.0,
            t_max: 1.0,
        }
    }

    fn call() -> Payoff {
        Payoff::EuropeanCall { strike: 100.0 }
    }

    fn grid(n: usize) -> GridSpec {
        GridSpec {
            s_max: 300.0,
            n_space: n,
            n_time: n,
            align_strike: true,
        }
    }

    #[test]
    fn black_scholes_reduction_within_half_percent() {
        // mu deliberately different from r: the hedge coupling must cancel it.
        let p = params(0.12, 0.0, 0.0, 0.0);
        let closure = StrategyClosure::zero();
        let surf = solve_pide(&p, &closure, &grid(200), &call()).unwrap();
        let got = surf.price_at(0.0, 100.0);
        let oracle = black_scholes_price(&BsInputs {
            s: 100.0,
            k: 100.0,
            r: 0.05,
            sigma: 0.2,
            tau: 1.0,
        })
        .unwrap();
        let rel = (got - oracle).abs() / oracle;
        assert!(rel <= 0.005, "got={got} oracle={oracle} rel={rel}");
    }

    #[test]
    fn terminal_condition_is_exact() {
        let p = params(0.05, 0.5, 0.5, 0.0);
        let closure = StrategyClosure::zero();
        let surf = solve_pide(&p, &closure, &grid(60), &call()).unwrap();
        let m = surf.f.n_time() - 1;
        let nodes: Vec<f64> = surf.f.s_nodes().to_vec();
        for (i, &s) in nodes.iter().enumerate() {
            let h = payoff_eval(&call(), s).unwrap();
            assert_eq!(surf.f.at(m, i), h, "terminal mismatch at s={s}");
        }
    }

    #[test]
    fn strike_lands_on_node_when_aligned() {
        let p = params(0.05, 0.0, 0.0, 0.0);
        let surf = solve_pide(&p, &StrategyClosure::zero(), &grid(400), &call()).unwrap();
        let k = 100.0;
        let hit = surf.f.s_nodes().iter().any(|&s| (s - k).abs() < 1e-12);
        assert!(hit, "strike must be a node");
        assert!(surf.f.s_nodes().last().unwrap() >= &300.0);
    }

    #[test]
    fn call_boundaries_track_asymptotes() {
        let p = params(0.05, 0.0, 0.0, 0.0);
        let surf = solve_pide(&p, &StrategyClosure::zero(), &grid(200), &call()).unwrap();
        let n = surf.f.n_space() - 1;
        let s_max = *surf.f.s_nodes().last().unwrap();
        for j in 0..surf.f.n_time() {
            assert_eq!(
                surf.f.at(j, 0),
                0.0,
                "zero-price boundary must be zero for calls"
            );
            let t = surf.f.t_nodes()[j];
            let asym = s_max - 100.0 * (-0.05 * (1.0 - t)).exp();
            // implicit-Euler discounting differs from exp by O(dt)
            assert!(
                (surf.f.at(j, n) - asym).abs() < 0.05,
                "upper boundary off asymptote at t={t}"
            );
        }
    }

    #[test]
    fn truncation_error_shrinks_with_larger_domain() {
        let p = params(0.05, 0.0, 0.0, 0.0);
        let closure = StrategyClosure::zero();
        let quote = 285.0;
        let mut prev_gap = f64::INFINITY;
        for s_max in [300.0, 450.0] {
            let g = GridSpec {
                s_max,
                n_space: 300,
                n_time: 120,
                align_strike: true,
            };
            let surf = solve_pide(&p, &closure, &g, &call()).unwrap();
            let value = surf.price_at(0.0, quote);
            let asym = quote - 100.0 * (-0.05f64).exp();
            let gap = (value - asym).abs();
            assert!(
                gap < prev_gap,
                "gap should shrink with s_max: {gap} vs {prev_gap}"
            );
            assert!(gap < 0.01 * 100.0);
            prev_gap = gap;
        }
    }

    #[test]
    fn grid_refinement_is_cauchy() {
        let p = params(0.05, 0.5, 0.5, 0.0);
        let closure = StrategyClosure::zero();
        let value = |n: usize| {
            solve_pide(&p, &closure, &grid(n), &call())
                .unwrap()
                .price_at(0.0, 100.0)
        };
        let (v100, v200, v400) = (value(100), value(200), value(400));
        let change1 = (v200 - v100).abs();
        let change2 = (v400 - v200).abs();
        assert!(
            change2 < change1,
            "refinement changes must shrink: {change1} then {change2}"
        );
    }

    #[test]
    fn monotone_in_payoff_for_linear_case() {
        // mu = r keeps the comparison clean; the two strikes share one grid
        // (alignment off), and h(K=110) <= h(K=90) pointwise must imply the
        // same ordering of solved surfaces.
        let p = params(0.05, 0.5, 0.5, 0.0);
        let closure = StrategyClosure::zero();
        let g = GridSpec {
            s_max: 300.0,
            n_space: 150,
            n_time: 150,
            align_strike: false,
        };
        let lo = solve_pide(&p, &closure, &g, &Payoff::EuropeanCall { strike: 110.0 }).unwrap();
        let hi = solve_pide(&p, &closure, &g, &Payoff::EuropeanCall { strike: 90.0 }).unwrap();
        for j in 0..lo.f.n_time() {
            for i in 0..lo.f.n_space() {
                assert!(
                    lo.f.at(j, i) <= hi.f.at(j, i) + 1e-8 * 100.0,
                    "monotonicity violated at (j={j}, i={i})"
                );
            }
        }
    }

    #[test]
    fn impact_moves_price_and_vanishes_with_lambda() {
        // Feedback through the self-consistent closure: rho = 0 reduces the
        // equation to the price-impact generalization of the Black-Scholes
        // equation with volatility sigma / (1 - lambda S f_SS).
        let closure = StrategyClosure {
            eta: CoefficientFn::constant(0.0),
            zeta: CoefficientFn::constant(0.0),
            mode: ClosureMode::SelfConsistentDiffusion,
        };
        let g = grid(120);
        let base = solve_pide(
            &params(0.05, 0.0, 0.0, 0.0),
            &StrategyClosure::zero(),
            &g,
            &call(),
        )
        .unwrap();
        let mut distances = Vec::new();
        for lambda in [0.05, 0.025, 0.0125] {
            let surf = solve_pide(&params(0.05, 0.0, 0.0, lambda), &closure, &g, &call()).unwrap();
            let mut sup: f64 = 0.0;
            for j in 0..surf.f.n_time() {
                for i in 0..surf.f.n_space() {
                    sup = sup.max((surf.f.at(j, i) - base.f.at(j, i)).abs());
                }
            }
            distances.push(sup);
        }
        assert!(
            distances[0] > 1e-3,
            "impact must move the price: {distances:?}"
        );
        assert!(
            distances[0] > distances[1] && distances[1] > distances[2],
            "distance to the frictionless surface must shrink with lambda: {distances:?}"
        );
    }

    #[test]
    fn delta_reduction_exact_without_jump_scales() {
        let closure = StrategyClosure::zero();
        let surf = solve_pide(&params(0.05, 0.5, 0.0, 0.0), &closure, &grid(150), &call()).unwrap();
        let report = delta_reduction_check(&surf);
        assert!(report.max_gap <= 1e-8, "gap={}", report.max_gap);
        assert!(report.passes());

        // impact on, still a = b = 0, via the self-consistent closure
        let sc = StrategyClosure {
            eta: CoefficientFn::constant(0.0),
            zeta: CoefficientFn::constant(0.0),
            mode: ClosureMode::SelfConsistentDiffusion,
        };
        let surf = solve_pide(&params(0.05, 0.0, 0.0, 0.05), &sc, &grid(120), &call()).unwrap();
        let report = delta_reduction_check(&surf);
        assert!(report.max_gap <= 1e-8, "gap={}", report.max_gap);
    }

    #[test]
    fn delta_reduction_fails_with_jumps_on() {
        let closure = StrategyClosure::zero();
        let surf = solve_pide(&params(0.05, 0.5, 0.5, 0.0), &closure, &grid(150), &call()).unwrap();
        let report = delta_reduction_check(&surf);
        assert!(
            report.max_gap > 1e-4,
            "negative control: jump hedge must differ from delta, gap={}",
            report.max_gap
        );
    }

    #[test]
    fn state_dependent_coefficients_solve_cleanly() {
        // Volatility smile from a clamped table, affine short rate. The
        // price must sit between the constant-coefficient envelopes (value
        // is monotone in volatility and, for calls, in the rate).
        let mut p = params(0.05, 0.3, 0.4, 0.0);
        p.sigma = CoefficientFn::Table {
            s: vec![50.0, 100.0, 200.0],
            values: vec![0.3, 0.2, 0.25],
        };
        p.r = CoefficientFn::AffineInPrice {
            intercept: 0.02,
            slope: 0.0001,
        };
        let closure = StrategyClosure::zero();
        let solve_at = |n: usize| {
            solve_pide(&p, &closure, &grid(n), &call())
                .unwrap()
                .price_at(0.0, 100.0)
        };
        let got = solve_at(200);

        let envelope = |sigma: f64, r: f64| {
            let mut q = params(0.05, 0.3, 0.4, 0.0);
            q.sigma = CoefficientFn::constant(sigma);
            q.r = CoefficientFn::constant(r);
            solve_pide(&q, &closure, &grid(200), &call())
                .unwrap()
                .price_at(0.0, 100.0)
        };
        let lo = envelope(0.2, 0.02);
        let hi = envelope(0.3, 0.05);
        assert!(
            got > lo && got < hi,
            "price {got} should sit inside the envelopes [{lo}, {hi}]"
        );

        // refinement still Cauchy with state-dependent coefficients
        let (v100, v200, v400) = (solve_at(100), solve_at(200), solve_at(400));
        assert!((v400 - v200).abs() < (v200 - v100).abs());
    }

    #[test]
    fn solver_is_deterministic() {
        let p = params(0.05, 0.5, 0.5, 0.0);
        let closure = StrategyClosure::zero();
        let a = solve_pide(&p, &closure, &grid(80), &call()).unwrap();
        let b = solve_pide(&p, &closure, &grid(80), &call()).unwrap();
        for j in 0..a.f.n_time() {
            for i in 0..a.f.n_space() {
                assert_eq!(a.f.at(j, i).to_bits(), b.f.at(j, i).to_bits());
                assert_eq!(a.theta.at(j, i).to_bits(), b.theta.at(j, i).to_bits());
            }
        }
    }

    #[test]
    fn rejects_invalid_model_and_unstable_jump_term() {
        let p = params(0.05, 0.5, -6.0, 0.0);
        let closure = StrategyClosure::zero();
        let report = validate_setup(&p, &closure, &grid(40), &call()).unwrap();
        assert!(!report.is_ok());
        match solve_pide(&p, &closure, &grid(40), &call()) {
            Err(PideError::Validation { first, .. }) => assert!(first.contains("jump factor")),
            other => panic!("expected validation failure, got {other:?}"),
        }
        let p = params(0.05, 500.0, 0.001, 0.0);
        match solve_pide(&p, &closure, &grid(40), &call()) {
            Err(PideError::ExplicitJumpUnstable { rho_dt }) => assert!(rho_dt >= 1.0),
            other => panic!("expected CFL rejection, got {other:?}"),
        }
    }

    #[test]
    fn put_surface_has_sane_boundaries() {
        let p = params(0.05, 0.0, 0.0, 0.0);
        let put = Payoff::EuropeanPut { strike: 100.0 };
        let surf = solve_pide(&p, &StrategyClosure::zero(), &grid(200), &put).unwrap();
        // lower boundary carries the discounted strike, upper goes to zero
        let expected_low = 100.0 * (1.0f64 / (1.0 + 0.05 * surf.dt)).powi(200);
        assert!((surf.f.at(0, 0) - expected_low).abs() < 1e-9);
        let n = surf.f.n_space() - 1;
        assert!(surf.f.at(0, n).abs() < 1e-12);
        // put-call parity against the companion call at the money
        let call_surf = solve_pide(&p, &StrategyClosure::zero(), &grid(200), &call()).unwrap();
        let parity = call_surf.price_at(0.0, 100.0) - surf.price_at(0.0, 100.0);
        let expected = 100.0 - 100.0 * (-0.05f64).exp();
        assert!(
            (parity - expected).abs() < 0.05,
            "parity={parity} expected={expected}"
        );
    }
}
