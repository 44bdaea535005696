//! Market coefficients, payoffs, and pointwise model quantities.
//!
//! Asset dynamics are proportional: the relative price increment per step is
//! `[mu + lambda*eta] dt + [sigma + lambda*zeta] dW + [a*sigma + b*lambda*zeta] dM`
//! with `M` a compensated Poisson process. A jump therefore multiplies the
//! price by the factor `1 + a*sigma + b*lambda*zeta`, shared verbatim between
//! the simulator, the nonlocal term of the pricing equation, and the hedge
//! formula. The factor must stay positive for prices to stay positive, which
//! is promoted to a hard validation error here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
    #[error("jump factor {factor} <= 0 at (t={t}, s={s}, zeta={zeta})")]
    NonPositiveJumpFactor {
        factor: f64,
        t: f64,
        s: f64,
        zeta: f64,
    },
}

/// Closed family of coefficient functions of `(t, S)`.
///
/// The table kind is piecewise linear in `S` and clamped at the table edges;
/// evaluation is pure, so identical inputs give bit-identical outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum CoefficientFn {
    #[serde(rename = "constant")]
    Constant { value: f64 },
    #[serde(rename = "affine")]
    AffineInPrice { intercept: f64, slope: f64 },
    #[serde(rename = "table")]
    Table { s: Vec<f64>, values: Vec<f64> },
}

impl CoefficientFn {
    pub fn constant(value: f64) -> Self {
        CoefficientFn::Constant { value }
    }

    pub fn eval(&self, _t: f64, s: f64) -> f64 {
        match self {
            CoefficientFn::Constant { value } => *value,
            CoefficientFn::AffineInPrice { intercept, slope } => intercept + slope * s,
            CoefficientFn::Table { s: xs, values } => {
                if s <= xs[0] {
                    return values[0];
                }
                let last = xs.len() - 1;
                if s >= xs[last] {
                    return values[last];
                }
                // xs is validated strictly increasing.
                let j = match xs.binary_search_by(|x| x.partial_cmp(&s).unwrap()) {
                    Ok(j) => return values[j],
                    Err(j) => j,
                };
                let w = (s - xs[j - 1]) / (xs[j] - xs[j - 1]);
                values[j - 1] + w * (values[j] - values[j - 1])
            }
        }
    }

    fn validate(&self, name: &'static str) -> Result<(), ModelError> {
        match self {
            CoefficientFn::Constant { value } => {
                if !value.is_finite() {
                    return Err(ModelError::NonFinite(name));
                }
            }
            CoefficientFn::AffineInPrice { intercept, slope } => {
                if !intercept.is_finite() || !slope.is_finite() {
                    return Err(ModelError::NonFinite(name));
                }
            }
            CoefficientFn::Table { s, values } => {
                if s.len() < 2 || s.len() != values.len() {
                    return Err(ModelError::Invalid {
                        what: name,
                        detail: "table needs >= 2 nodes and equal lengths".into(),
                    });
                }
                if s.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(ModelError::NonFinite(name));
                }
                if s.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(ModelError::Invalid {
                        what: name,
                        detail: "table abscissae must be strictly increasing".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// All model coefficients plus initial conditions; the single source of truth
/// for the market shared by every other module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Expected return per unit time, proportional form, `mu(t, S)`.
    pub mu: CoefficientFn,
    /// Volatility per square-root time, proportional form, `sigma(t, S) > 0`.
    pub sigma: CoefficientFn,
    /// Risk-free short rate, `r(t, S) >= 0`.
    pub r: CoefficientFn,
    /// Price impact factor `lambda(t, S) >= 0`, multiplier on the trader flow.
    #[serde(rename = "lambda")]
    pub lambda_impact: CoefficientFn,
    /// Jump intensity (expected jumps per unit time), `rho >= 0`.
    pub rho: f64,
    /// Jump-scale constant: scales `sigma` inside the jump factor.
    pub a: f64,
    /// Strategy-jump constant: scales `lambda*zeta` inside the jump factor.
    pub b: f64,
    /// Initial asset price, `> 0`.
    pub s0: f64,
    /// Initial share count, `>= 0`.
    pub theta0: f64,
    /// Maturity, `> 0`.
    #[serde(rename = "maturity")]
    pub t_max: f64,
}

impl ModelParams {
    /// Basic scalar/field validity, independent of any grid.
    pub fn validate_fields(&self) -> Result<(), ModelError> {
        self.mu.validate("mu")?;
        self.sigma.validate("sigma")?;
        self.r.validate("r")?;
        self.lambda_impact.validate("lambda")?;
        for (v, what) in [
            (self.rho, "rho"),
            (self.a, "a"),
            (self.b, "b"),
            (self.s0, "s0"),
            (self.theta0, "theta0"),
            (self.t_max, "maturity"),
        ] {
            if !v.is_finite() {
                return Err(ModelError::Invalid {
                    what,
                    detail: "must be finite".into(),
                });
            }
        }
        if self.rho < 0.0 {
            return Err(ModelError::Invalid {
                what: "rho",
                detail: "must be >= 0".into(),
            });
        }
        if self.s0 <= 0.0 {
            return Err(ModelError::Invalid {
                what: "s0",
                detail: "must be > 0".into(),
            });
        }
        if self.theta0 < 0.0 {
            return Err(ModelError::Invalid {
                what: "theta0",
                detail: "must be >= 0".into(),
            });
        }
        if self.t_max <= 0.0 {
            return Err(ModelError::Invalid {
                what: "maturity",
                detail: "must be > 0".into(),
            });
        }
        Ok(())
    }
}

/// Contract payoff at maturity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Payoff {
    #[serde(rename = "european-call")]
    EuropeanCall { strike: f64 },
    #[serde(rename = "european-put")]
    EuropeanPut { strike: f64 },
    /// Piecewise-linear table in `S`, clamped at its edges; values must be
    /// nonnegative so the solved surface keeps its sign invariant.
    #[serde(rename = "custom-table")]
    CustomTable { s: Vec<f64>, values: Vec<f64> },
}

impl Payoff {
    pub fn strike(&self) -> Option<f64> {
        match self {
            Payoff::EuropeanCall { strike } | Payoff::EuropeanPut { strike } => Some(*strike),
            Payoff::CustomTable { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Payoff::EuropeanCall { strike } | Payoff::EuropeanPut { strike } => {
                if !strike.is_finite() || *strike <= 0.0 {
                    return Err(ModelError::Invalid {
                        what: "strike",
                        detail: "must be finite and > 0".into(),
                    });
                }
            }
            Payoff::CustomTable { s, values } => {
                let table = CoefficientFn::Table {
                    s: s.clone(),
                    values: values.clone(),
                };
                table.validate("payoff table")?;
                if values.iter().any(|v| *v < 0.0) {
                    return Err(ModelError::Invalid {
                        what: "payoff table",
                        detail: "values must be >= 0".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Exact terminal payoff; the call is `max(S - K, 0)`.
pub fn payoff_eval(payoff: &Payoff, s: f64) -> Result<f64, ModelError> {
    if !s.is_finite() {
        return Err(ModelError::NonFinite("payoff_eval(s)"));
    }
    if s < 0.0 {
        return Err(ModelError::Invalid {
            what: "payoff_eval(s)",
            detail: "must be >= 0".into(),
        });
    }
    Ok(match payoff {
        Payoff::EuropeanCall { strike } => (s - strike).max(0.0),
        Payoff::EuropeanPut { strike } => (strike - s).max(0.0),
        Payoff::CustomTable { s: xs, values } => CoefficientFn::Table {
            s: xs.clone(),
            values: values.clone(),
        }
        .eval(0.0, s),
    })
}

/// The jump factor from already-evaluated coefficients. All call sites (the
/// simulator, the nonlocal term of the pricing equation, the hedge formula)
/// funnel through this one expression.
#[inline]
pub fn jump_factor_parts(a: f64, b: f64, sigma: f64, lambda: f64, zeta: f64) -> f64 {
    1.0 + a * sigma + b * lambda * zeta
}

/// Multiplicative displacement of the price at a jump:
/// `1 + a*sigma(t,S) + b*lambda(t,S)*zeta`.
///
/// One shared implementation so the simulator and the nonlocal term of the
/// pricing equation can never disagree on the displacement.
pub fn jump_factor(params: &ModelParams, t: f64, s: f64, zeta: f64) -> Result<f64, ModelError> {
    if !t.is_finite() || !s.is_finite() || !zeta.is_finite() {
        return Err(ModelError::NonFinite("jump_factor"));
    }
    if s <= 0.0 {
        return Err(ModelError::Invalid {
            what: "jump_factor(s)",
            detail: "must be > 0".into(),
        });
    }
    let sigma = params.sigma.eval(t, s);
    let lambda = params.lambda_impact.eval(t, s);
    let factor = jump_factor_parts(params.a, params.b, sigma, lambda, zeta);
    if factor <= 0.0 || factor.is_nan() {
        return Err(ModelError::NonPositiveJumpFactor { factor, t, s, zeta });
    }
    Ok(factor)
}

/// The jump loading `a*sigma + b*lambda*zeta` (the factor minus one), without
/// the positivity gate; used where the loading itself enters a formula.
pub fn jump_loading(params: &ModelParams, t: f64, s: f64, zeta: f64) -> f64 {
    params.a * params.sigma.eval(t, s) + params.b * params.lambda_impact.eval(t, s) * zeta
}

/// One violated invariant at a grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub check: &'static str,
    pub t: f64,
    pub s: f64,
    pub value: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} at (t={}, s={}): value {}",
            self.check, self.t, self.s, self.value
        )
    }
}

/// Structured validation report; empty means every invariant holds on the
/// probed nodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every model invariant across the `(t, S)` nodes, with the strategy
/// diffusion loading supplied per node by `zeta_at`.
///
/// Collects all violations instead of failing on the first one so callers can
/// report the full picture.
pub fn validate_params_on_nodes(
    params: &ModelParams,
    t_nodes: &[f64],
    s_nodes: &[f64],
    mut zeta_at: impl FnMut(f64, f64) -> f64,
) -> Result<ValidationReport, ModelError> {
    params.validate_fields()?;
    let mut report = ValidationReport::default();
    for &t in t_nodes {
        for &s in s_nodes {
            if s <= 0.0 {
                continue; // the S = 0 boundary carries no dynamics
            }
            let sigma = params.sigma.eval(t, s);
            if sigma <= 0.0 || !sigma.is_finite() {
                report.violations.push(Violation {
                    check: "sigma > 0",
                    t,
                    s,
                    value: sigma,
                });
            }
            let r = params.r.eval(t, s);
            if r < 0.0 || !r.is_finite() {
                report.violations.push(Violation {
                    check: "r >= 0",
                    t,
                    s,
                    value: r,
                });
            }
            let lambda = params.lambda_impact.eval(t, s);
            if lambda < 0.0 || !lambda.is_finite() {
                report.violations.push(Violation {
                    check: "lambda >= 0",
                    t,
                    s,
                    value: lambda,
                });
            }
            let zeta = zeta_at(t, s);
            let factor = jump_factor_parts(params.a, params.b, sigma, lambda, zeta);
            if factor <= 0.0 || factor.is_nan() {
                report.violations.push(Violation {
                    check: "jump factor > 0",
                    t,
                    s,
                    value: factor,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_params() -> ModelParams {
        ModelParams {
            mu: CoefficientFn::constant(0.05),
            sigma: CoefficientFn::constant(0.2),
            r: CoefficientFn::constant(0.05),
            lambda_impact: CoefficientFn::constant(0.0),
            rho: 0.0,
            a: 0.0,
            b: 0.0,
            s0: 100.0,
            theta0: 0.0,
            t_max: 1.0,
        }
    }

    fn nodes() -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..5).map(|i| i as f64 * 0.25).collect();
        let s: Vec<f64> = (0..11).map(|i| i as f64 * 30.0).collect();
        (t, s)
    }

    #[test]
    fn jump_factor_no_jump_reduction() {
        let p = base_params();
        assert_eq!(jump_factor(&p, 0.3, 80.0, 0.7).unwrap(), 1.0);
    }

    #[test]
    fn jump_factor_direct_substitution() {
        let mut p = base_params();
        p.a = 0.5;
        let f = jump_factor(&p, 0.0, 100.0, 0.0).unwrap();
        assert!((f - 1.1).abs() < 1e-15);
    }

    #[test]
    fn jump_factor_with_strategy_loading() {
        // 1 + (-0.5)(0.2) + (1)(0.1)(0.3) = 1 - 0.1 + 0.03 = 0.93
        let mut p = base_params();
        p.a = -0.5;
        p.b = 1.0;
        p.lambda_impact = CoefficientFn::constant(0.1);
        let f = jump_factor(&p, 0.0, 100.0, 0.3).unwrap();
        assert!((f - 0.93).abs() < 1e-15);
    }

    #[test]
    fn jump_factor_rejects_nonpositive_and_nonfinite() {
        let mut p = base_params();
        p.a = -6.0; // 1 - 1.2 < 0
        assert!(matches!(
            jump_factor(&p, 0.0, 100.0, 0.0),
            Err(ModelError::NonPositiveJumpFactor { .. })
        ));
        assert!(jump_factor(&base_params(), f64::NAN, 100.0, 0.0).is_err());
        assert!(jump_factor(&base_params(), 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn payoff_examples() {
        let call = Payoff::EuropeanCall { strike: 100.0 };
        assert_eq!(payoff_eval(&call, 100.0).unwrap(), 0.0);
        assert_eq!(payoff_eval(&call, 137.5).unwrap(), 37.5);
        let put = Payoff::EuropeanPut { strike: 100.0 };
        assert_eq!(payoff_eval(&put, 80.0).unwrap(), 20.0);
        assert!(payoff_eval(&call, -1.0).is_err());
        assert!(payoff_eval(&call, f64::NAN).is_err());
    }

    #[test]
    fn call_payoff_convex_and_monotone() {
        let call = Payoff::EuropeanCall { strike: 100.0 };
        let mut prev = payoff_eval(&call, 0.0).unwrap();
        for i in 1..300 {
            let s = i as f64;
            let v = payoff_eval(&call, s).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        // midpoint convexity on a sample of chords
        for (lo, hi) in [(10.0, 250.0), (80.0, 120.0), (95.0, 105.0), (0.0, 300.0)] {
            let mid = 0.5 * (lo + hi);
            let lhs = payoff_eval(&call, mid).unwrap();
            let rhs = 0.5 * (payoff_eval(&call, lo).unwrap() + payoff_eval(&call, hi).unwrap());
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn custom_table_payoff_interpolates_and_clamps() {
        let p = Payoff::CustomTable {
            s: vec![0.0, 100.0, 200.0],
            values: vec![5.0, 0.0, 10.0],
        };
        p.validate().unwrap();
        assert_eq!(payoff_eval(&p, 50.0).unwrap(), 2.5);
        assert_eq!(payoff_eval(&p, 150.0).unwrap(), 5.0);
        assert_eq!(payoff_eval(&p, 500.0).unwrap(), 10.0);
        let bad = Payoff::CustomTable {
            s: vec![0.0, 100.0],
            values: vec![-1.0, 0.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn coefficient_eval_is_pure_and_clamped() {
        let table = CoefficientFn::Table {
            s: vec![50.0, 100.0, 150.0],
            values: vec![0.1, 0.2, 0.4],
        };
        let a = table.eval(0.3, 120.0);
        let b = table.eval(0.3, 120.0);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(table.eval(0.0, 10.0), 0.1);
        assert_eq!(table.eval(0.0, 900.0), 0.4);
        assert!((table.eval(0.0, 125.0) - 0.3).abs() < 1e-15);
        let aff = CoefficientFn::AffineInPrice {
            intercept: 0.1,
            slope: 0.001,
        };
        assert!((aff.eval(0.0, 100.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn validate_reports_negative_jump_factor() {
        let (t, s) = nodes();
        let mut p = base_params();
        p.a = -6.0;
        let rep = validate_params_on_nodes(&p, &t, &s, |_, _| 0.0).unwrap();
        assert!(!rep.is_ok());
        assert!(rep.violations.iter().all(|v| v.check == "jump factor > 0"));
        assert!((rep.violations[0].value - (1.0 - 1.2)).abs() < 1e-12);
    }

    #[test]
    fn validate_defaults_clean() {
        let (t, s) = nodes();
        let rep = validate_params_on_nodes(&base_params(), &t, &s, |_, _| 0.0).unwrap();
        assert!(rep.is_ok());
    }

    #[test]
    fn validate_strategy_loading_violation_everywhere() {
        // 1 + b*lambda*zeta = 1 + (-40)(0.1)(0.3) = -0.2 at every node
        let (t, s) = nodes();
        let mut p = base_params();
        p.b = -40.0;
        p.lambda_impact = CoefficientFn::constant(0.1);
        let rep = validate_params_on_nodes(&p, &t, &s, |_, _| 0.3).unwrap();
        let dynamic_nodes = t.len() * s.iter().filter(|v| **v > 0.0).count();
        assert_eq!(rep.violations.len(), dynamic_nodes);
        assert!(rep
            .violations
            .iter()
            .all(|v| (v.value - (-0.2)).abs() < 1e-12));
    }

    #[test]
    fn validate_fields_rejects_bad_scalars() {
        let mut p = base_params();
        p.s0 = 0.0;
        assert!(p.validate_fields().is_err());
        let mut p = base_params();
        p.rho = -0.1;
        assert!(p.validate_fields().is_err());
        let mut p = base_params();
        p.theta0 = -1.0;
        assert!(p.validate_fields().is_err());
        let mut p = base_params();
        p.t_max = 0.0;
        assert!(p.validate_fields().is_err());
    }
}
