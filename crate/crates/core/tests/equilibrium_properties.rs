use pacing_core::equilibrium::{solve_hp_equilibrium, solve_ncp, SolverConfig};
use pacing_core::estimators::{Estimator, Family};
use pacing_core::harness::Band;
use pacing_core::strategies::{draw_rounds, simulate};
use pacing_core::{BidderSpec, Distribution, MarketConfig, RngStream, StepSchedule, Strategy, TraceDetail};
use proptest::prelude::*;

fn symmetric(k: usize, rho: f64) -> MarketConfig {
    let u = Distribution::uniform(0.0, 1.0).unwrap();
    MarketConfig::new(vec![BidderSpec::new(u.clone(), rho, 1.0 / rho + 1.0); k], u, 20_000)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn accepted_solutions_satisfy_complementarity(
        k in 1usize..=2,
        rhos in prop::collection::vec(0.01f64..0.3, 2),
        spreads in prop::collection::vec(0.3f64..1.5, 2),
    ) {
        let bidders = (0..k)
            .map(|i| BidderSpec::new(Distribution::uniform(0.0, spreads[i]).unwrap(), rhos[i], spreads[i] / rhos[i] + 1.0))
            .collect();
        let m = MarketConfig::new(bidders, Distribution::uniform(0.0, 1.0).unwrap(), 1000);
        let config = SolverConfig::default();
        for fam in [Family::Ip, Family::Cp] {
            let r = solve_ncp(&m, fam, &Estimator::quadrature(1e-10), &config).unwrap();
            if r.converged {
                for i in 0..k {
                    let x = r.multipliers[i];
                    prop_assert!((x * (rhos[i] - r.expenditure[i])).abs() <= config.tol);
                    prop_assert!(r.expenditure[i] <= rhos[i] + config.tol);
                }
            }
        }
    }
}

#[test]
fn coordination_lowers_the_symmetric_multiplier() {
    // deterministic, K = 2
    let m = symmetric(2, 0.05);
    let q = Estimator::quadrature(1e-10);
    let cfg = SolverConfig { tol: 1e-8, ..SolverConfig::default() };
    let ip = solve_ncp(&m, Family::Ip, &q, &cfg).unwrap();
    let cp = solve_ncp(&m, Family::Cp, &q, &cfg).unwrap();
    let hp = solve_hp_equilibrium(&m, &ip, &q, 1e-8).unwrap();
    assert!(ip.converged && cp.converged);
    for k in 0..2 {
        assert!(ip.multipliers[k] > 0.0);
        assert!(cp.multipliers[k] < ip.multipliers[k], "{:?} vs {:?}", cp.multipliers, ip.multipliers);
        // symmetric coalition: the hybrid external multiplier lands on the coordinated one
        assert!((hp.multipliers[k] - cp.multipliers[k]).abs() < 1e-3, "{:?} vs {:?}", hp.multipliers, cp.multipliers);
    }

    // Monte Carlo, K = 3, spread over independent sample banks
    let m = symmetric(3, 0.05);
    let mut lam = Vec::new();
    let mut xi = Vec::new();
    for seed in 0..4 {
        let est = Estimator::monte_carlo(&m, 100_000, seed);
        lam.push(solve_ncp(&m, Family::Ip, &est, &SolverConfig::default()).unwrap().multipliers[0]);
        xi.push(solve_ncp(&m, Family::Cp, &est, &SolverConfig::default()).unwrap().multipliers[0]);
    }
    let (l, x) = (Band::of(&lam), Band::of(&xi));
    let se = (l.std_error.powi(2) + x.std_error.powi(2)).sqrt();
    assert!(l.mean - x.mean > 3.0 * se, "lambda {l:?} xi {x:?}");
}

#[test]
fn solution_does_not_depend_on_the_sample_bank() {
    let m = symmetric(3, 0.05);
    let a = solve_ncp(&m, Family::Ip, &Estimator::monte_carlo(&m, 200_000, 1), &SolverConfig::default()).unwrap();
    let b = solve_ncp(&m, Family::Ip, &Estimator::monte_carlo(&m, 200_000, 2), &SolverConfig::default()).unwrap();
    for k in 0..3 {
        assert!((a.multipliers[k] - b.multipliers[k]).abs() < 0.02, "{:?} vs {:?}", a.multipliers, b.multipliers);
    }
}

/// Mean over rounds `[from, from + window)`.
fn window_mean(values: &[f64], from: usize, window: usize) -> f64 {
    values[from..from + window].iter().sum::<f64>() / window as f64
}

#[test]
fn simulations_settle_at_the_solved_multipliers() {
    let mut m = symmetric(2, 0.05);
    m.step = StepSchedule::InverseSqrt { c: 1.0 };
    m.trace_detail = TraceDetail::Full;
    let q = Estimator::quadrature(1e-10);
    let cfg = SolverConfig { tol: 1e-8, ..SolverConfig::default() };
    let ip = solve_ncp(&m, Family::Ip, &q, &cfg).unwrap();
    let cp = solve_ncp(&m, Family::Cp, &q, &cfg).unwrap();
    let hp = solve_hp_equilibrium(&m, &ip, &q, 1e-8).unwrap();
    let draws = draw_rounds(&m, &RngStream::new(11), 0, 0);
    // early overspending drains the budget shortly before the horizon, so
    // the window sits in the settled middle stretch
    let (from, window) = (8000, 4000);
    for (s, target, lambda_target) in [
        (Strategy::Ip, &ip.multipliers, None),
        (Strategy::Cp, &cp.multipliers, None),
        (Strategy::Hp, &hp.multipliers, Some(&ip.multipliers)),
    ] {
        let trace = simulate(&m, s, draws.iter().cloned(), 100).unwrap().trace.unwrap();
        assert!(trace[from + window].remaining_budget.iter().all(|&r| r > 1.0));
        for k in 0..2 {
            let own: Vec<f64> = trace.iter().map(|r| r.mu_or_xi.as_ref().or(r.lambda.as_ref()).unwrap()[k]).collect();
            let got = window_mean(&own, from, window);
            assert!((got - target[k]).abs() < 0.05, "{s} bidder {k}: {got} vs {}", target[k]);
            if let Some(lt) = lambda_target {
                let lam: Vec<f64> = trace.iter().map(|r| r.lambda.as_ref().unwrap()[k]).collect();
                let got = window_mean(&lam, from, window);
                assert!((got - lt[k]).abs() < 0.05, "{s} pseudo bidder {k}: {got} vs {}", lt[k]);
            }
        }
    }
}
