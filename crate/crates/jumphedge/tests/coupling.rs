//! Cross-module behaviour: the solved hedge surface feeding back into the
//! simulator through the self-consistent strategy closure.

use jumphedge::hedge::{replication_error, HedgePolicy};
use jumphedge::model::{payoff_eval, CoefficientFn, ModelParams, Payoff};
use jumphedge::pide::{solve_pide, GridSpec};
use jumphedge::simulate::{
    scan_paths, simulate_coupled_system, ClosureMode, StrategyClosure, ThetaPolicy,
};

fn impact_market(lambda: f64) -> ModelParams {
    ModelParams {
        mu: CoefficientFn::constant(0.05),
        sigma: CoefficientFn::constant(0.2),
        r: CoefficientFn::constant(0.05),
        lambda_impact: CoefficientFn::constant(lambda),
        rho: 0.0,
        a: 0.0,
        b: 0.0,
        s0: 100.0,
        theta0: 0.5,
        t_max: 1.0,
    }
}

fn self_consistent() -> StrategyClosure {
    StrategyClosure {
        eta: CoefficientFn::constant(0.0),
        zeta: CoefficientFn::constant(0.0),
        mode: ClosureMode::SelfConsistentDiffusion,
    }
}

#[test]
fn simulator_accepts_surface_backed_closure() {
    let params = impact_market(0.02);
    let closure = self_consistent();
    let grid = GridSpec {
        s_max: 300.0,
        n_space: 100,
        n_time: 100,
        align_strike: true,
    };
    let payoff = Payoff::EuropeanCall { strike: 100.0 };
    let surface = solve_pide(&params, &closure, &grid, &payoff).unwrap();

    let one =
        simulate_coupled_system(&params, &closure, Some(&surface.theta), 32, 100, 5, 0.0).unwrap();
    let two =
        simulate_coupled_system(&params, &closure, Some(&surface.theta), 32, 100, 5, 0.0).unwrap();
    assert_eq!(one, two, "surface-backed closure must stay deterministic");
    for path in 0..one.n_paths {
        for &s in one.s_path(path) {
            assert!(s.is_finite() && s > 0.0);
        }
        // the strategy actually trades: theta moves away from theta0
        let theta = one.theta_path(path);
        let moved = theta.iter().any(|&x| (x - 0.5).abs() > 1e-6);
        assert!(moved, "self-consistent zeta should produce trading flow");
    }
}

#[test]
fn impact_market_replication_still_favours_the_surface_policy() {
    let params = impact_market(0.02);
    let closure = self_consistent();
    let grid = GridSpec {
        s_max: 300.0,
        n_space: 100,
        n_time: 100,
        align_strike: true,
    };
    let payoff = Payoff::EuropeanCall { strike: 100.0 };
    let surface = solve_pide(&params, &closure, &grid, &payoff).unwrap();

    let star = replication_error(
        &params,
        &closure,
        HedgePolicy::Surface,
        &surface,
        2000,
        100,
        19,
    )
    .unwrap();
    let unhedged = replication_error(
        &params,
        &closure,
        HedgePolicy::Constant(0.0),
        &surface,
        2000,
        100,
        19,
    )
    .unwrap();
    assert!(
        star.estimate < 0.05 * unhedged.estimate,
        "surface policy {} should dominate unhedged {}",
        star.estimate,
        unhedged.estimate
    );
}

// With mu = r and lambda = 0 the hedge coupling vanishes and the pricing
// equation is the backward Kolmogorov equation of the simulated dynamics, so
// the discounted Monte Carlo payoff expectation must reproduce the solved
// price. This ties the solver's compensated drift and nonlocal jump term to
// the simulator's multiplicative jump application end to end.
#[test]
fn jump_price_matches_discounted_payoff_expectation() {
    let params = ModelParams {
        mu: CoefficientFn::constant(0.05),
        sigma: CoefficientFn::constant(0.2),
        r: CoefficientFn::constant(0.05),
        lambda_impact: CoefficientFn::constant(0.0),
        rho: 0.5,
        a: 0.5,
        b: 0.0,
        s0: 100.0,
        theta0: 0.0,
        t_max: 1.0,
    };
    let closure = StrategyClosure::zero();
    let payoff = Payoff::EuropeanCall { strike: 100.0 };
    let grid = GridSpec {
        s_max: 300.0,
        n_space: 400,
        n_time: 400,
        align_strike: true,
    };
    let surface = solve_pide(&params, &closure, &grid, &payoff).unwrap();
    let f0 = surface.price_at(0.0, 100.0);

    // The jump premium must be visible over the diffusion-only value.
    assert!(
        f0 > 10.6,
        "jump config should price above the no-jump 10.45, got {f0}"
    );

    let disc = (-0.05f64).exp();
    let discounted: Vec<f64> = scan_paths(
        &params,
        &closure,
        None,
        ThetaPolicy::Sde,
        0.0,
        100_000,
        400,
        99,
        |_, rec| disc * payoff_eval(&payoff, rec[rec.len() - 1].s).unwrap(),
    )
    .unwrap();
    let n = discounted.len() as f64;
    let mean = discounted.iter().sum::<f64>() / n;
    let var = discounted
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(
        (mean - f0).abs() <= 3.0 * se,
        "solver {f0} vs Monte Carlo {mean} +- {se}"
    );
}
