//! Pricing and hedging of European options in an illiquid jump-diffusion market.
//!
//! The underlying follows proportional dynamics driven by a Brownian motion, a
//! compensated Poisson process, and a feedback term from the trader's own order
//! flow (price impact). The crate provides:
//!
//! - [`model`]: market coefficients, payoffs, and the shared jump factor;
//! - [`simulate`]: forward Euler–Maruyama simulation of the coupled
//!   stock/strategy/wealth system plus a numerical Itô-formula residual check;
//! - [`pide`]: a backward implicit–explicit finite-difference solver for the
//!   nonlinear pricing equation with its nonlocal jump term;
//! - [`hedge`]: the closed-form variance-minimizing share count, an
//!   independent quadratic-minimization oracle, and Monte Carlo replication
//!   error measurement;
//! - [`oracles`]: Black–Scholes closed form and a lognormal quadrature
//!   reference used by the test and validation suites;
//! - [`config`] / [`runner`]: batch front door used by the `jumphedge` binary.

pub mod config;
pub mod hedge;
pub mod model;
pub mod oracles;
pub mod parallel;
pub mod pide;
pub mod rng;
pub mod runner;
pub mod simulate;
pub mod surface;
pub mod util;

// The guide chapters in book/src are compiled as doc-tests so the snippets
// there cannot drift from the library API. `cargo test --doc` runs them.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/market-model.md")]
    mod market_model {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/pricing.md")]
    mod pricing {}
    #[doc = include_str!("../../../book/src/hedging.md")]
    mod hedging {}
    #[doc = include_str!("../../../book/src/validation.md")]
    mod validation {}
}
