//! Independent closed-form and brute-force pricing references.
//!
//! These functions are used by the test and validation suites as oracles for
//! the finite-difference solver in the no-jump, no-impact limit. The normal
//! CDF is built on Cody's rational approximations for erf/erfc so that golden
//! values do not depend on platform `libm` behaviour; the lognormal
//! quadrature bounds any residual approximation drift.

// The published rational-approximation coefficients are kept digit for digit.
#![allow(clippy::excessive_precision)]

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid input: {0}")]
    Invalid(&'static str),
}

/// Inputs for the constant-coefficient European call references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsInputs {
    /// Spot price, S > 0.
    pub s: f64,
    /// Strike, K > 0.
    pub k: f64,
    /// Constant short rate.
    pub r: f64,
    /// Constant volatility, sigma > 0.
    pub sigma: f64,
    /// Time to maturity, tau >= 0.
    pub tau: f64,
}

impl BsInputs {
    pub fn validate(&self) -> Result<(), OracleError> {
        let vals = [self.s, self.k, self.r, self.sigma, self.tau];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::NonFinite("BsInputs"));
        }
        if self.s <= 0.0 {
            return Err(OracleError::Invalid("spot must be > 0"));
        }
        if self.k <= 0.0 {
            return Err(OracleError::Invalid("strike must be > 0"));
        }
        if self.sigma <= 0.0 {
            return Err(OracleError::Invalid("sigma must be > 0"));
        }
        if self.tau < 0.0 {
            return Err(OracleError::Invalid("tau must be >= 0"));
        }
        Ok(())
    }
}

const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

// Cody (1969) rational approximations, |x| <= 0.46875.
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
// 0.46875 < x <= 4.
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
// x > 4.
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];

// exp(-y^2) split as exp(-ysq^2) * exp(-(y - ysq)(y + ysq)) with ysq a
// 1/16-grid truncation of y, following Cody. Keeps the argument error small.
fn exp_neg_square(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Complementary error function with absolute error well below 1e-12.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        return 1.0 - erf(x);
    }
    let res = if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        exp_neg_square(y) * (num + ERF_C[7]) / (den + ERF_D[7])
    } else if y < 26.6 {
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let r = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        exp_neg_square(y) * (INV_SQRT_PI - r) / y
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - res
    } else {
        res
    }
}

/// Error function companion to [`erfc`].
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let z = y * y;
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        x * (num + ERF_A[3]) / (den + ERF_B[3])
    } else {
        let tail = 1.0 - erfc(y);
        if x < 0.0 {
            -tail
        } else {
            tail
        }
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// European call price under constant-coefficient lognormal dynamics.
///
/// `tau == 0` returns the payoff. This is the reduction target of the
/// finite-difference solver when jumps and price impact are switched off.
pub fn black_scholes_price(inp: &BsInputs) -> Result<f64, OracleError> {
    inp.validate()?;
    if inp.tau == 0.0 {
        return Ok((inp.s - inp.k).max(0.0));
    }
    let sqrt_tau = inp.tau.sqrt();
    let vol = inp.sigma * sqrt_tau;
    let d1 = ((inp.s / inp.k).ln() + (inp.r + 0.5 * inp.sigma * inp.sigma) * inp.tau) / vol;
    let d2 = d1 - vol;
    let df = (-inp.r * inp.tau).exp();
    Ok(inp.s * norm_cdf(d1) - inp.k * df * norm_cdf(d2))
}

/// European put companion, used for the put–call parity check.
pub fn black_scholes_put(inp: &BsInputs) -> Result<f64, OracleError> {
    inp.validate()?;
    if inp.tau == 0.0 {
        return Ok((inp.k - inp.s).max(0.0));
    }
    let sqrt_tau = inp.tau.sqrt();
    let vol = inp.sigma * sqrt_tau;
    let d1 = ((inp.s / inp.k).ln() + (inp.r + 0.5 * inp.sigma * inp.sigma) * inp.tau) / vol;
    let d2 = d1 - vol;
    let df = (-inp.r * inp.tau).exp();
    Ok(inp.k * df * norm_cdf(-d2) - inp.s * norm_cdf(-d1))
}

/// Brute-force call price: trapezoidal integration of the discounted expected
/// payoff under the lognormal terminal law.
///
/// The integration variable is the standard normal `z` with terminal price
/// `S exp((r - sigma^2/2) tau + sigma sqrt(tau) z)`. The payoff is zero below
/// the moneyness threshold, so the trapezoid runs from that threshold up to
/// `z = 10`, which keeps the integrand smooth on the whole domain.
pub fn lognormal_quadrature_price(inp: &BsInputs, n_points: usize) -> Result<f64, OracleError> {
    inp.validate()?;
    if n_points < 1000 {
        return Err(OracleError::Invalid("n_points must be >= 1000"));
    }
    if inp.tau == 0.0 {
        return Ok((inp.s - inp.k).max(0.0));
    }
    let sqrt_tau = inp.tau.sqrt();
    let vol = inp.sigma * sqrt_tau;
    let m = (inp.r - 0.5 * inp.sigma * inp.sigma) * inp.tau;
    // Payoff positive for z > z_star.
    let z_star = ((inp.k / inp.s).ln() - m) / vol;
    let lo = z_star.clamp(-10.0, 10.0);
    let hi = 10.0;
    if lo >= hi {
        return Ok(0.0);
    }
    let h = (hi - lo) / (n_points - 1) as f64;
    let integrand = |z: f64| -> f64 {
        let st = inp.s * (m + vol * z).exp();
        (st - inp.k).max(0.0) * norm_pdf(z)
    };
    let mut acc = 0.5 * (integrand(lo) + integrand(hi));
    for i in 1..n_points - 1 {
        acc += integrand(lo + i as f64 * h);
    }
    Ok((-inp.r * inp.tau).exp() * acc * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn inp(s: f64, k: f64, r: f64, sigma: f64, tau: f64) -> BsInputs {
        BsInputs {
            s,
            k,
            r,
            sigma,
            tau,
        }
    }

    #[test]
    fn erf_reference_points() {
        // erf(1) and erf(2) to 15 digits (Abramowitz & Stegun tables).
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-13);
        assert!((erf(2.0) - 0.995_322_265_018_952_7).abs() < 1e-13);
        assert!((erf(0.2) - 0.222_702_589_210_478_45).abs() < 1e-13);
        assert!((erfc(3.0) - 2.209_049_699_858_544e-5).abs() < 1e-15);
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(1.96) - 0.975_002_104_851_780_2).abs() < 1e-12);
        assert!((norm_cdf(-1.96) + norm_cdf(1.96) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_tau_returns_payoff() {
        let v = black_scholes_price(&inp(120.0, 100.0, 0.03, 0.2, 0.0)).unwrap();
        assert_eq!(v, 20.0);
        let q = lognormal_quadrature_price(&inp(120.0, 100.0, 0.03, 0.2, 0.0), 1000).unwrap();
        assert_eq!(q, 20.0);
    }

    #[test]
    fn atm_zero_rate_matches_quadrature() {
        let i = inp(100.0, 100.0, 0.0, 0.2, 1.0);
        let bs = black_scholes_price(&i).unwrap();
        let quad = lognormal_quadrature_price(&i, 1_000_000).unwrap();
        assert!((bs - quad).abs() < 1e-8, "bs={bs} quad={quad}");
        // 100 * (2 * Phi(0.1) - 1)
        assert!((bs - 7.9656).abs() < 1e-4, "bs={bs}");
    }

    #[test]
    fn huge_vol_bounded_by_spot() {
        let i = inp(100.0, 100.0, 0.0, 5.0, 1.0);
        let bs = black_scholes_price(&i).unwrap();
        let quad = lognormal_quadrature_price(&i, 1_000_000).unwrap();
        assert!(bs < i.s);
        assert!(bs > 0.99 * quad, "bs={bs} quad={quad}");
        assert!(bs > 0.9 * i.s);
    }

    #[test]
    fn quadrature_converges_with_doubling() {
        let i = inp(110.0, 95.0, 0.04, 0.3, 0.7);
        let mut prev_change = f64::INFINITY;
        let mut prev = lognormal_quadrature_price(&i, 1000).unwrap();
        for n in [2000usize, 4000, 8000, 16000] {
            let cur = lognormal_quadrature_price(&i, n).unwrap();
            let change = (cur - prev).abs();
            assert!(
                change < prev_change,
                "n={n} change={change} prev={prev_change}"
            );
            prev_change = change;
            prev = cur;
        }
    }

    #[test]
    fn closed_form_matches_quadrature_on_random_draws() {
        let mut rng = CounterRng::from_seed_and_stream(977, 0);
        for _ in 0..20 {
            let i = inp(
                50.0 + 150.0 * rng.next_f64(),
                50.0 + 150.0 * rng.next_f64(),
                0.1 * rng.next_f64(),
                0.05 + 0.55 * rng.next_f64(),
                0.1 + 1.9 * rng.next_f64(),
            );
            let bs = black_scholes_price(&i).unwrap();
            let quad = lognormal_quadrature_price(&i, 1_000_000).unwrap();
            assert!(
                (bs - quad).abs() < 1e-8,
                "inputs {i:?}: bs={bs} quad={quad}"
            );
        }
    }

    #[test]
    fn put_call_parity() {
        let mut rng = CounterRng::from_seed_and_stream(31, 0);
        for _ in 0..50 {
            let i = inp(
                20.0 + 200.0 * rng.next_f64(),
                20.0 + 200.0 * rng.next_f64(),
                0.08 * rng.next_f64(),
                0.05 + 0.5 * rng.next_f64(),
                0.05 + 2.0 * rng.next_f64(),
            );
            let c = black_scholes_price(&i).unwrap();
            let p = black_scholes_put(&i).unwrap();
            let rhs = i.s - i.k * (-i.r * i.tau).exp();
            assert!((c - p - rhs).abs() < 1e-10, "parity violated for {i:?}");
        }
    }

    #[test]
    fn monotone_in_vol_and_maturity() {
        let mut prev = 0.0;
        for sigma in [0.05, 0.1, 0.2, 0.35, 0.5, 0.8] {
            let v = black_scholes_price(&inp(100.0, 105.0, 0.02, sigma, 1.0)).unwrap();
            assert!(v > prev);
            prev = v;
        }
        prev = 0.0;
        for tau in [0.1, 0.25, 0.5, 1.0, 2.0] {
            let v = black_scholes_price(&inp(100.0, 105.0, 0.02, 0.2, tau)).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(black_scholes_price(&inp(-1.0, 100.0, 0.0, 0.2, 1.0)).is_err());
        assert!(black_scholes_price(&inp(100.0, 100.0, 0.0, 0.0, 1.0)).is_err());
        assert!(black_scholes_price(&inp(f64::NAN, 100.0, 0.0, 0.2, 1.0)).is_err());
        assert!(lognormal_quadrature_price(&inp(100.0, 100.0, 0.0, 0.2, 1.0), 10).is_err());
    }
}
