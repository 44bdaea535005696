//! The variance-minimizing hedge.
//!
//! Perfect replication is impossible once jumps are present: matching the
//! Brownian exposure and the jump exposure of the option with a single share
//! count cannot be done simultaneously. The expected squared shortfall
//! decomposes into a time integral of the pointwise quadratic
//!
//! ```text
//! l(x) = (sigma + lambda zeta)^2 S^2 (f_S - x)^2
//!      + rho (f(t, S J) - f - x S (a sigma + b lambda zeta))^2
//! ```
//!
//! whose vertex is the closed form [`theta_star`]. [`theta_oracle`] locates
//! the same vertex by direct numerical minimization of `l` and exists so the
//! algebra can be cross-checked without trusting it.

use thiserror::Error;

use crate::model::{payoff_eval, ModelError, ModelParams};
use crate::pide::PriceSurface;
use crate::simulate::{scan_paths, SimError, StrategyClosure, ThetaPolicy};
use crate::util::fmt_sig12;

#[derive(Debug, Error)]
pub enum HedgeError {
    #[error("non-finite hedge context field {0}")]
    NonFinite(&'static str),
    #[error("degenerate hedge denominator: {0}")]
    Degenerate(&'static str),
    #[error("replication request invalid: {0}")]
    Invalid(String),
    #[error("surface was solved for different inputs (hash {surface:#018x} vs {request:#018x})")]
    IncompatibleSurface { surface: u64, request: u64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything the hedge formula needs at one `(t, S)` point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HedgeContext {
    pub s: f64,
    /// Surface value `f(t, S)`.
    pub f: f64,
    /// Surface slope `df/dS` at `(t, S)`.
    pub f_s: f64,
    /// Surface value at the jump-displaced price, `f(t, S J)`.
    pub f_jumped: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub a: f64,
    pub b: f64,
    pub rho: f64,
}

impl HedgeContext {
    /// Effective diffusion loading of the asset, `sigma + lambda zeta`.
    #[inline]
    pub fn sigma_eff(&self) -> f64 {
        self.sigma + self.lambda * self.zeta
    }

    /// Jump loading `a sigma + b lambda zeta` (jump factor minus one).
    #[inline]
    pub fn jump_load(&self) -> f64 {
        self.a * self.sigma + self.b * self.lambda * self.zeta
    }

    /// Denominator of the closed form:
    /// `(sigma+lambda zeta)^2 S^2 + rho S^2 (a sigma + b lambda zeta)^2`.
    #[inline]
    pub fn denominator(&self) -> f64 {
        let se = self.sigma_eff();
        let j = self.jump_load();
        se * se * self.s * self.s + self.rho * self.s * self.s * j * j
    }

    fn validate(&self) -> Result<(), HedgeError> {
        let fields = [
            (self.s, "s"),
            (self.f, "f"),
            (self.f_s, "f_s"),
            (self.f_jumped, "f_jumped"),
            (self.sigma, "sigma"),
            (self.lambda, "lambda"),
            (self.zeta, "zeta"),
            (self.a, "a"),
            (self.b, "b"),
            (self.rho, "rho"),
        ];
        for (v, name) in fields {
            if !v.is_finite() {
                return Err(HedgeError::NonFinite(name));
            }
        }
        if self.denominator() > 0.0 {
            return Ok(());
        }
        if self.s == 0.0 {
            Err(HedgeError::Degenerate("S = 0"))
        } else if self.sigma_eff() == 0.0 {
            Err(HedgeError::Degenerate(
                "sigma + lambda*zeta = 0 and the jump channel rho*(a sigma + b lambda zeta)^2 vanishes",
            ))
        } else {
            Err(HedgeError::Degenerate("denominator not positive"))
        }
    }
}

/// Closed-form share count minimizing the expected squared shortfall:
///
/// ```text
/// theta = [(sigma+lambda zeta)^2 S^2 f_S + rho S (a sigma + b lambda zeta) (f(t,SJ) - f)]
///       / [(sigma+lambda zeta)^2 S^2 + rho S^2 (a sigma + b lambda zeta)^2]
/// ```
///
/// With `a = b = 0` (or `rho = 0`) this reduces to the delta `f_S`.
pub fn theta_star(ctx: &HedgeContext) -> Result<f64, HedgeError> {
    ctx.validate()?;
    let se = ctx.sigma_eff();
    let j = ctx.jump_load();
    let s = ctx.s;
    if ctx.rho == 0.0 || j == 0.0 {
        // The jump channel drops from numerator and denominator alike and the
        // ratio collapses to the delta identically.
        return Ok(ctx.f_s);
    }
    let numerator = se * se * s * s * ctx.f_s + ctx.rho * s * j * (ctx.f_jumped - ctx.f);
    Ok(numerator / ctx.denominator())
}

/// The pointwise quadratic objective `l(x)` whose vertex is the optimal hedge.
pub fn quadratic_objective(ctx: &HedgeContext, x: f64) -> f64 {
    let se = ctx.sigma_eff();
    let j = ctx.jump_load();
    let diffusion_leg = se * ctx.s * (ctx.f_s - x);
    let jump_leg = ctx.f_jumped - ctx.f - x * ctx.s * j;
    diffusion_leg * diffusion_leg + ctx.rho * jump_leg * jump_leg
}

/// Numerical minimizer of [`quadratic_objective`], independent of the algebra
/// behind [`theta_star`].
///
/// The vertex is a convex combination of the diffusion target `f_S` and the
/// jump target `(f(t,SJ) - f)/(S (a sigma + b lambda zeta))`, so a bracket
/// spanning both (widened by one) is guaranteed to contain it. Ternary search
/// shrinks the bracket to width 1e-12; because `l` is exactly quadratic, a
/// final three-point parabola fit on well-separated samples then pins the
/// vertex to machine precision, below the floating-point plateau that limits
/// pure comparison search.
pub fn theta_oracle(ctx: &HedgeContext) -> Result<f64, HedgeError> {
    ctx.validate()?;
    let j = ctx.jump_load();
    let jump_target = if ctx.rho > 0.0 && j != 0.0 && ctx.s > 0.0 {
        (ctx.f_jumped - ctx.f) / (ctx.s * j)
    } else {
        ctx.f_s
    };
    let mut lo = ctx.f_s.min(jump_target) - 1.0;
    let mut hi = ctx.f_s.max(jump_target) + 1.0;
    while hi - lo > 1e-12 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if quadratic_objective(ctx, m1) <= quadratic_objective(ctx, m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let mid = 0.5 * (lo + hi);
    let w = 1.0;
    let (l0, l1, l2) = (
        quadratic_objective(ctx, mid - w),
        quadratic_objective(ctx, mid),
        quadratic_objective(ctx, mid + w),
    );
    let curvature = l0 - 2.0 * l1 + l2; // = 2 D w^2 for l = D (x - v)^2 + c
    if curvature > 0.0 {
        Ok(mid - w * (l2 - l0) / (2.0 * curvature))
    } else {
        Ok(mid)
    }
}

/// Which share policy the replication run applies along each path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HedgePolicy {
    /// Read the solved hedge surface.
    Surface,
    /// Surface value shifted by a constant number of shares.
    Perturbed(f64),
    /// Constant share count (0 gives the unhedged benchmark).
    Constant(f64),
}

impl HedgePolicy {
    pub fn label(&self) -> String {
        match self {
            HedgePolicy::Surface => "theta_star".to_string(),
            HedgePolicy::Perturbed(eps) => {
                if *eps >= 0.0 {
                    format!("theta_star+{}", eps)
                } else {
                    format!("theta_star{}", eps)
                }
            }
            HedgePolicy::Constant(c) => format!("constant_{}", c),
        }
    }
}

/// Monte Carlo estimate of the expected squared replication shortfall.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub strategy: String,
    /// Estimate of `E[(h(S_T) - V_T)^2]`.
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl ReplicationReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.strategy,
            fmt_sig12(self.estimate),
            fmt_sig12(self.std_error),
            self.n_paths,
            self.n_steps,
            self.seed
        )
    }
}

/// Simulates the market under `closure`, evolves trader wealth from the
/// option premium `f(0, s0)` with the chosen share policy, and measures
/// `E[(h(S_T) - V_T)^2]` with its standard error.
///
/// The per-path random streams depend only on `(seed, path)`, so runs with
/// different policies but the same seed are common-random-number comparisons.
pub fn replication_error(
    params: &ModelParams,
    closure: &StrategyClosure,
    policy: HedgePolicy,
    surface: &PriceSurface,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<ReplicationReport, HedgeError> {
    if n_paths < 2 {
        return Err(HedgeError::Invalid(
            "n_paths must be >= 2 for a standard error".into(),
        ));
    }
    let request_hash =
        crate::pide::hash_solver_inputs(params, closure, &surface.payoff, &surface.grid);
    if request_hash != surface.params_hash {
        return Err(HedgeError::IncompatibleSurface {
            surface: surface.params_hash,
            request: request_hash,
        });
    }
    let v0 = surface.f.interp(0.0, params.s0);
    let theta_policy = match policy {
        HedgePolicy::Surface => ThetaPolicy::Surface(&surface.theta),
        HedgePolicy::Perturbed(eps) => ThetaPolicy::SurfaceShifted(&surface.theta, eps),
        HedgePolicy::Constant(c) => ThetaPolicy::Constant(c),
    };
    let payoff = surface.payoff.clone();
    let squared_shortfalls = scan_paths(
        params,
        closure,
        Some(&surface.theta),
        theta_policy,
        v0,
        n_paths,
        n_steps,
        seed,
        |_, records| {
            let last = records[records.len() - 1];
            let h = payoff_eval(&payoff, last.s).unwrap_or(f64::NAN);
            let shortfall = h - last.v;
            shortfall * shortfall
        },
    )?;
    if squared_shortfalls.iter().any(|x| !x.is_finite()) {
        return Err(HedgeError::Invalid(
            "non-finite shortfall encountered".into(),
        ));
    }
    let n = squared_shortfalls.len() as f64;
    let mean = squared_shortfalls.iter().sum::<f64>() / n;
    let var = squared_shortfalls
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / (n - 1.0);
    Ok(ReplicationReport {
        strategy: policy.label(),
        estimate: mean,
        std_error: (var / n).sqrt(),
        n_paths,
        n_steps,
        seed,
    })
}
