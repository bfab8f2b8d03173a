//! The named experiments: the asymmetric two-bidder counterexample and the
//! budget misreport study.

use rayon::prelude::*;

use super::sweep::{Band, SummaryRow};
use crate::distributions::{Distribution, DistributionSpec, MixtureComponent};
use crate::equilibrium::{solve_hp_equilibrium, solve_ncp, EquilibriumResult, SolverConfig};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, Family};
use crate::market::{BidderSpec, MarketConfig, StepSchedule, Strategy};
use crate::rng::RngStream;
use crate::strategies::{draw_rounds, simulate_observed};

/// Multiplier cap used by the counterexample.
pub const COUNTEREXAMPLE_CAP: f64 = 3.0;

/// Two bidders; bidder 0 draws from `U[0,1]` w.p. `p` and `U[1, 1+eta]`
/// otherwise, bidder 1 from `U[0,1]`; the outside bid is always 0; every
/// rate is `v_bar / 3`.
pub fn counterexample_market(p: f64, eta: f64, horizon: usize) -> Result<MarketConfig> {
    if !(p > 0.0 && p < 1.0 && eta > 0.0 && eta < 1.0) {
        return Err(Error::Config(format!("p and eta must lie in (0, 1), got {p} and {eta}")));
    }
    let strong = Distribution::new(DistributionSpec::Mixture {
        components: vec![
            MixtureComponent {
                weight: p,
                dist: DistributionSpec::Uniform { lo: 0.0, hi: 1.0 },
            },
            MixtureComponent {
                weight: 1.0 - p,
                dist: DistributionSpec::Uniform { lo: 1.0, hi: 1.0 + eta },
            },
        ],
    })?;
    let weak = Distribution::uniform(0.0, 1.0)?;
    let bidders = [strong, weak]
        .into_iter()
        .map(|v| {
            let rho = v.support_hi() / COUNTEREXAMPLE_CAP;
            BidderSpec::new(v, rho, COUNTEREXAMPLE_CAP)
        })
        .collect();
    let mut m = MarketConfig::new(bidders, Distribution::point_mass(0.0)?, horizon);
    m.step = StepSchedule::InverseSqrt { c: 0.1 };
    m.initial_multipliers = vec![0.0, 0.0];
    m.validate()?;
    Ok(m)
}

/// Average of `Pi_k / t` across repetitions at one checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub round: usize,
    pub bidder: usize,
    pub band: Band,
}

#[derive(Clone, Debug)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    /// Final `Pi_k / T` per bidder, banded over repetitions.
    pub utility: Vec<Band>,
    pub curve: Vec<CurvePoint>,
    /// Largest single-round expenditure seen by any bidder.
    pub max_expenditure: f64,
    pub rows: Vec<SummaryRow>,
}

#[derive(Clone, Debug)]
pub struct CounterexampleResult {
    pub market: MarketConfig,
    pub strategies: Vec<StrategyOutcome>,
}

impl CounterexampleResult {
    pub fn get(&self, s: Strategy) -> Option<&StrategyOutcome> {
        self.strategies.iter().find(|o| o.strategy == s)
    }
}

struct RepOutcome {
    curve: Vec<Vec<f64>>,
    max_expenditure: f64,
    rows: Vec<SummaryRow>,
}

/// Simulate all three strategies on shared rounds for every repetition.
pub fn run_counterexample(
    market: &MarketConfig,
    repetitions: usize,
    seed: u64,
    checkpoints: usize,
    window: usize,
    scenario: &str,
) -> Result<CounterexampleResult> {
    if repetitions == 0 {
        return Err(Error::Config("counterexample needs at least one repetition".into()));
    }
    let horizon = market.horizon;
    let checkpoints = checkpoints.clamp(1, horizon);
    let marks: Vec<usize> = (1..=checkpoints).map(|i| i * horizon / checkpoints).collect();
    let stream = RngStream::new(seed);
    let k = market.k();
    let reps: Vec<Result<Vec<RepOutcome>>> = (0..repetitions)
        .into_par_iter()
        .map(|rep| {
            let draws = draw_rounds(market, &stream, 0, rep as u64);
            Strategy::ALL
                .iter()
                .map(|&s| {
                    let mut cum = vec![0.0; k];
                    let mut curve = vec![Vec::with_capacity(marks.len()); k];
                    let mut next = 0;
                    let mut max_expenditure: f64 = 0.0;
                    let sim = simulate_observed(market, s, draws.iter().cloned(), window, |d, o| {
                        for i in 0..k {
                            cum[i] += o.utility[i];
                            max_expenditure = max_expenditure.max(o.expenditure[i]);
                        }
                        if next < marks.len() && d.round == marks[next] {
                            for i in 0..k {
                                curve[i].push(cum[i] / d.round as f64);
                            }
                            next += 1;
                        }
                    })?;
                    let rhos = market.rhos();
                    let mut rows = SummaryRow::from_summary(&sim.summary, 0.0, rep, seed, scenario);
                    for r in &mut rows {
                        r.rho = rhos[r.bidder];
                    }
                    Ok(RepOutcome {
                        curve,
                        max_expenditure,
                        rows,
                    })
                })
                .collect()
        })
        .collect();
    let reps: Vec<Vec<RepOutcome>> = reps.into_iter().collect::<Result<_>>()?;

    let strategies = Strategy::ALL
        .iter()
        .enumerate()
        .map(|(si, &s)| {
            let per_rep: Vec<&RepOutcome> = reps.iter().map(|r| &r[si]).collect();
            let utility = (0..k)
                .map(|i| {
                    let xs: Vec<f64> = per_rep.iter().map(|r| *r.curve[i].last().unwrap()).collect();
                    Band::of(&xs)
                })
                .collect();
            let mut curve = Vec::new();
            for (c, &round) in marks.iter().enumerate() {
                for i in 0..k {
                    let xs: Vec<f64> = per_rep.iter().map(|r| r.curve[i][c]).collect();
                    curve.push(CurvePoint {
                        round,
                        bidder: i,
                        band: Band::of(&xs),
                    });
                }
            }
            StrategyOutcome {
                strategy: s,
                utility,
                curve,
                max_expenditure: per_rep.iter().map(|r| r.max_expenditure).fold(0.0, f64::max),
                rows: per_rep.iter().flat_map(|r| r.rows.iter().cloned()).collect(),
            }
        })
        .collect();
    Ok(CounterexampleResult {
        market: market.clone(),
        strategies,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MisreportSpec {
    pub base: MarketConfig,
    pub deviator: usize,
    pub reported_rho: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub strategy: Strategy,
}

impl MisreportSpec {
    pub fn misreported_market(&self) -> Result<MarketConfig> {
        let mut m = self.base.clone();
        let b = m
            .bidders
            .get_mut(self.deviator)
            .ok_or_else(|| Error::Config(format!("deviator {} out of range", self.deviator)))?;
        if !(self.reported_rho > 0.0 && self.reported_rho <= b.rho) {
            return Err(Error::Config(format!(
                "reported rate {} must lie in (0, {}]",
                self.reported_rho, b.rho
            )));
        }
        b.reported_rho = Some(self.reported_rho);
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug)]
pub struct MisreportResult {
    /// Per bidder `Pi/T` and `V/T` under the truthful report.
    pub truthful_utility: Vec<Band>,
    pub truthful_value: Vec<Band>,
    pub misreport_utility: Vec<Band>,
    pub misreport_value: Vec<Band>,
    /// Paired per-repetition differences (misreport minus truthful).
    pub delta_utility: Vec<Band>,
    pub delta_value: Vec<Band>,
    pub equilibrium_truthful: EquilibriumResult,
    pub equilibrium_misreport: EquilibriumResult,
}

fn solve_for(market: &MarketConfig, strategy: Strategy, estimator: &Estimator, solver: &SolverConfig) -> Result<EquilibriumResult> {
    match strategy {
        Strategy::Ip => solve_ncp(market, Family::Ip, estimator, solver),
        Strategy::Cp => solve_ncp(market, Family::Cp, estimator, solver),
        Strategy::Hp => {
            let lambda = solve_ncp(market, Family::Ip, estimator, solver)?;
            solve_hp_equilibrium(market, &lambda, estimator, solver.tol)
        }
    }
}

/// Truthful and misreported runs on coupled rounds, plus both equilibria.
pub fn run_misreport(spec: &MisreportSpec, estimator: &Estimator, solver: &SolverConfig) -> Result<MisreportResult> {
    if spec.repetitions == 0 {
        return Err(Error::Config("misreport needs at least one repetition".into()));
    }
    spec.base.validate()?;
    let lying = spec.misreported_market()?;
    let stream = RngStream::new(spec.seed);
    let k = spec.base.k();
    type Rep = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);
    let reps: Vec<Result<Rep>> = (0..spec.repetitions)
        .into_par_iter()
        .map(|rep| {
            let draws = draw_rounds(&spec.base, &stream, 0, rep as u64);
            let run = |m: &MarketConfig| -> Result<(Vec<f64>, Vec<f64>)> {
                let s = simulate_observed(m, spec.strategy, draws.iter().cloned(), 1, |_, _| {})?.summary;
                Ok((
                    s.bidders.iter().map(|b| b.avg_utility).collect(),
                    s.bidders.iter().map(|b| b.avg_value).collect(),
                ))
            };
            let (tu, tv) = run(&spec.base)?;
            let (mu, mv) = run(&lying)?;
            Ok((tu, tv, mu, mv))
        })
        .collect();
    let reps: Vec<Rep> = reps.into_iter().collect::<Result<_>>()?;
    let band = |f: &dyn Fn(&Rep) -> f64| Band::of(&reps.iter().map(f).collect::<Vec<_>>());
    let per_bidder = |f: &dyn Fn(&Rep, usize) -> f64| -> Vec<Band> { (0..k).map(|i| band(&|r| f(r, i))).collect() };
    Ok(MisreportResult {
        truthful_utility: per_bidder(&|r, i| r.0[i]),
        truthful_value: per_bidder(&|r, i| r.1[i]),
        misreport_utility: per_bidder(&|r, i| r.2[i]),
        misreport_value: per_bidder(&|r, i| r.3[i]),
        delta_utility: per_bidder(&|r, i| r.2[i] - r.0[i]),
        delta_value: per_bidder(&|r, i| r.3[i] - r.1[i]),
        equilibrium_truthful: solve_for(&spec.base, spec.strategy, estimator, solver)?,
        equilibrium_misreport: solve_for(&lying, spec.strategy, estimator, solver)?,
    })
}
