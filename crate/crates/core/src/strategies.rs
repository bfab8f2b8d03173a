//! The three pacing state machines and the simulation loop that drives them.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::auction::{resolve_round, RoundDraw, RoundOutcome};
use crate::diagnostics::{diagnostics_of, Diagnostics, DiagnosticsAccumulator, DEFAULT_WINDOW};
use crate::distributions::Distribution;
use crate::error::Result;
use crate::io::{csv_writer, fmt_f64, fmt_opt};
use crate::market::{MarketConfig, Strategy, TraceDetail};
use crate::rng::{RngStream, StreamRole};

/// Shaded bid `min(v / (1 + m), remaining)`.
#[inline]
pub fn shade(value: f64, multiplier: f64, remaining: f64) -> f64 {
    (value / (1.0 + multiplier)).min(remaining)
}

#[inline]
fn project(x: f64, hi: f64) -> f64 {
    x.max(0.0).min(hi)
}

/// Lowest index among the maximal entries.
fn elect(bids: &[f64]) -> usize {
    let mut best = 0;
    for (i, &b) in bids.iter().enumerate().skip(1) {
        if b > bids[best] {
            best = i;
        }
    }
    best
}

/// Bids of one round before the auction is resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct BidPlan {
    pub external: Vec<f64>,
    pub internal: Option<Vec<f64>>,
    pub elected: Option<usize>,
}

/// Multipliers and budgets of a coalition running one strategy.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyState {
    pub strategy: Strategy,
    /// Pacing multipliers of IP, pseudo multipliers of HP; empty under CP.
    pub lambda: Vec<f64>,
    /// External multipliers of HP.
    pub mu: Option<Vec<f64>>,
    /// Multipliers of CP.
    pub xi: Option<Vec<f64>>,
    pub remaining_budget: Vec<f64>,
    /// Running sum of positive projection errors of the HP external update.
    pub projection_error: Vec<f64>,
    /// Number of rounds with a positive projection error.
    pub projection_error_events: Vec<u64>,
    rho: Vec<f64>,
    cap: Vec<f64>,
    epsilon: f64,
}

impl StrategyState {
    pub fn new(market: &MarketConfig, strategy: Strategy) -> Self {
        Self::from_parts(
            strategy,
            market.rhos(),
            market.caps(),
            market.budgets(),
            market.initial(),
            market.epsilon(),
        )
    }

    pub fn from_parts(
        strategy: Strategy,
        rho: Vec<f64>,
        cap: Vec<f64>,
        budgets: Vec<f64>,
        initial: Vec<f64>,
        epsilon: f64,
    ) -> Self {
        let k = rho.len();
        let (lambda, mu, xi) = match strategy {
            Strategy::Ip => (initial, None, None),
            Strategy::Cp => (Vec::new(), None, Some(initial)),
            Strategy::Hp => (initial.clone(), Some(initial), None),
        };
        StrategyState {
            strategy,
            lambda,
            mu,
            xi,
            remaining_budget: budgets,
            projection_error: vec![0.0; k],
            projection_error_events: vec![0; k],
            rho,
            cap,
            epsilon,
        }
    }

    pub fn k(&self) -> usize {
        self.rho.len()
    }

    /// The multiplier that shades the externally posted bid.
    pub fn active_multipliers(&self) -> &[f64] {
        match self.strategy {
            Strategy::Ip => &self.lambda,
            Strategy::Cp => self.xi.as_deref().unwrap_or(&[]),
            Strategy::Hp => self.mu.as_deref().unwrap_or(&[]),
        }
    }

    /// Every member posts her own shaded bid.
    pub fn ip_bid(&self, draw: &RoundDraw) -> BidPlan {
        let external = (0..self.k())
            .map(|k| shade(draw.values[k], self.lambda[k], self.remaining_budget[k]))
            .collect();
        BidPlan {
            external,
            internal: None,
            elected: None,
        }
    }

    /// The member with the highest shaded bid posts it; the rest post 0.
    pub fn cp_bid(&self, draw: &RoundDraw) -> BidPlan {
        let xi = self.xi.as_ref().expect("CP state carries xi");
        let internal: Vec<f64> = (0..self.k())
            .map(|k| shade(draw.values[k], xi[k], self.remaining_budget[k]))
            .collect();
        let winner = elect(&internal);
        let mut external = vec![0.0; self.k()];
        external[winner] = internal[winner];
        BidPlan {
            external,
            internal: Some(internal),
            elected: Some(winner),
        }
    }

    /// Election on pseudo multipliers; the elected member bids with her external one.
    pub fn hp_bid(&self, draw: &RoundDraw) -> BidPlan {
        let mu = self.mu.as_ref().expect("HP state carries mu");
        let internal: Vec<f64> = (0..self.k())
            .map(|k| shade(draw.values[k], self.lambda[k], self.remaining_budget[k]))
            .collect();
        let winner = elect(&internal);
        let mut external = vec![0.0; self.k()];
        external[winner] = shade(draw.values[winner], mu[winner], self.remaining_budget[winner]);
        BidPlan {
            external,
            internal: Some(internal),
            elected: Some(winner),
        }
    }

    pub fn bid(&self, draw: &RoundDraw) -> BidPlan {
        match self.strategy {
            Strategy::Ip => self.ip_bid(draw),
            Strategy::Cp => self.cp_bid(draw),
            Strategy::Hp => self.hp_bid(draw),
        }
    }

    /// Apply the multiplier and budget updates after a resolved round.
    ///
    /// Under HP this also fills `outcome.pseudo_expenditure`.
    pub fn update(&mut self, plan: &BidPlan, outcome: &mut RoundOutcome) {
        let eps = self.epsilon;
        let n = self.k();
        match self.strategy {
            Strategy::Ip => {
                for k in 0..self.k() {
                    let z = outcome.expenditure[k];
                    self.lambda[k] = project(self.lambda[k] - eps * (self.rho[k] - z), self.cap[k]);
                }
            }
            Strategy::Cp => {
                let xi = self.xi.as_mut().expect("CP state carries xi");
                for k in 0..n {
                    let z = outcome.expenditure[k];
                    xi[k] = project(xi[k] - eps * (self.rho[k] - z), self.cap[k]);
                }
            }
            Strategy::Hp => {
                let internal = plan.internal.as_ref().expect("HP plan carries internal bids");
                let pseudo = pseudo_expenditures(internal, &outcome.expenditure, &outcome.allocation);
                let mu = self.mu.as_mut().expect("HP state carries mu");
                for k in 0..n {
                    let z = outcome.expenditure[k];
                    let lambda = project(self.lambda[k] - eps * (self.rho[k] - pseudo[k]), self.cap[k]);
                    let raw = mu[k] - eps * (self.rho[k] - z);
                    let excess = raw - lambda;
                    if excess > 0.0 {
                        self.projection_error[k] += excess;
                        self.projection_error_events[k] += 1;
                    }
                    self.lambda[k] = lambda;
                    mu[k] = project(raw, lambda);
                }
                outcome.pseudo_expenditure = Some(pseudo);
            }
        }
        for (rem, &z) in self.remaining_budget.iter_mut().zip(&outcome.expenditure) {
            *rem = (*rem - z).max(0.0);
        }
    }

    /// Bid, resolve and update for one round.
    pub fn step(&mut self, draw: &RoundDraw) -> Result<RoundOutcome> {
        let plan = self.bid(draw);
        let mut outcome = resolve_round(draw, &plan.external)?;
        outcome.internal_bids = plan.internal.clone();
        self.update(&plan, &mut outcome);
        Ok(outcome)
    }
}

/// `z'_k = 1{b^I_k >= z_k} * max(z_k, x_k * d^I_k)` with `d^I_k = max_{i != k} b^I_i`.
pub fn pseudo_expenditures(internal: &[f64], expenditure: &[f64], allocation: &[bool]) -> Vec<f64> {
    let k = internal.len();
    (0..k)
        .map(|i| {
            let d_int = (0..k).filter(|&j| j != i).map(|j| internal[j]).fold(0.0, f64::max);
            let z = expenditure[i];
            if internal[i] >= z {
                if allocation[i] {
                    z.max(d_int)
                } else {
                    z
                }
            } else {
                0.0
            }
        })
        .collect()
}

/// Sequential value and outside-bid draws of one repetition.
///
/// Each bidder and the outside bid read their own substream, so every
/// strategy simulated with the same coordinates sees the same rounds.
pub struct DrawSource {
    values: Vec<(Distribution, ChaCha8Rng)>,
    outside: (Distribution, ChaCha8Rng),
    round: usize,
}

impl DrawSource {
    pub fn new(market: &MarketConfig, stream: &RngStream, experiment: u64, repetition: u64) -> Self {
        let values = market
            .bidders
            .iter()
            .enumerate()
            .map(|(k, b)| (b.value.clone(), stream.at(experiment, repetition, StreamRole::Value(k), 0)))
            .collect();
        let outside = (
            market.outside.clone(),
            stream.at(experiment, repetition, StreamRole::Outside, 0),
        );
        DrawSource {
            values,
            outside,
            round: 0,
        }
    }
}

impl Iterator for DrawSource {
    type Item = RoundDraw;

    fn next(&mut self) -> Option<RoundDraw> {
        self.round += 1;
        let values = self.values.iter_mut().map(|(d, rng)| d.sample(rng)).collect();
        let (d, rng) = &mut self.outside;
        Some(RoundDraw {
            round: self.round,
            values,
            outside_bid: d.sample(rng),
        })
    }
}

/// Draw `horizon` rounds once so several strategies can replay them.
pub fn draw_rounds(market: &MarketConfig, stream: &RngStream, experiment: u64, repetition: u64) -> Vec<RoundDraw> {
    DrawSource::new(market, stream, experiment, repetition)
        .take(market.horizon)
        .collect()
}

/// Everything known about one round of a simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub draw: RoundDraw,
    pub outcome: RoundOutcome,
    /// Multipliers used for this round's bids.
    pub lambda: Option<Vec<f64>>,
    pub mu_or_xi: Option<Vec<f64>>,
    /// Budget left before the round.
    pub remaining_budget: Vec<f64>,
}

/// Time averages of one bidder over a simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct BidderSummary {
    pub avg_utility: f64,
    pub avg_expenditure: f64,
    pub avg_value: f64,
    pub win_rate: f64,
    /// Final multiplier shading the external bid (lambda, xi or mu).
    pub final_multiplier: f64,
    /// Final pseudo multiplier under HP.
    pub final_lambda: Option<f64>,
    pub diagnostics: Option<Diagnostics>,
    /// Fraction of rounds with a positive HP projection error.
    pub projection_error_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSummary {
    pub strategy: Strategy,
    pub horizon: usize,
    pub bidders: Vec<BidderSummary>,
    /// Last round at which every bidder still had at least `v_bar` of budget.
    pub ending_time: usize,
}

impl SimulationSummary {
    /// Coalition welfare per round.
    pub fn welfare(&self) -> f64 {
        self.bidders.iter().map(|b| b.avg_utility).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub trace: Option<Vec<RoundRecord>>,
    pub summary: SimulationSummary,
}

/// Run one strategy on the given rounds.
pub fn simulate<I>(market: &MarketConfig, strategy: Strategy, draws: I, window: usize) -> Result<Simulation>
where
    I: IntoIterator<Item = RoundDraw>,
{
    simulate_observed(market, strategy, draws, window, |_, _| {})
}

/// As [`simulate`], calling `observe` after every resolved round.
pub fn simulate_observed<I, O>(market: &MarketConfig, strategy: Strategy, draws: I, window: usize, mut observe: O) -> Result<Simulation>
where
    I: IntoIterator<Item = RoundDraw>,
    O: FnMut(&RoundDraw, &RoundOutcome),
{
    market.validate()?;
    let k = market.k();
    let horizon = market.horizon;
    let v_bars: Vec<f64> = market.bidders.iter().map(|b| b.v_bar()).collect();
    let mut state = StrategyState::new(market, strategy);
    let keep = market.trace_detail == TraceDetail::Full;
    let mut trace = keep.then(|| Vec::with_capacity(horizon));

    let mut utility = vec![0.0; k];
    let mut spent = vec![0.0; k];
    let mut value = vec![0.0; k];
    let mut wins = vec![0u64; k];
    let mut acc = vec![DiagnosticsAccumulator::new(window.min(horizon)); k];
    let mut ending_time = 0;

    for draw in draws.into_iter().take(horizon) {
        if state.remaining_budget.iter().zip(&v_bars).all(|(r, v)| r >= v) {
            ending_time = draw.round;
        }
        let before = keep.then(|| {
            let lambda = (!state.lambda.is_empty()).then(|| state.lambda.clone());
            let other = state.mu.clone().or_else(|| state.xi.clone());
            (lambda, other, state.remaining_budget.clone())
        });
        let active: Vec<f64> = state.active_multipliers().to_vec();
        let outcome = state.step(&draw)?;
        observe(&draw, &outcome);
        for i in 0..k {
            utility[i] += outcome.utility[i];
            spent[i] += outcome.expenditure[i];
            if outcome.allocation[i] {
                wins[i] += 1;
                value[i] += draw.values[i];
            }
            acc[i].push(active[i], outcome.expenditure[i]);
        }
        if let (Some(trace), Some((lambda, mu_or_xi, remaining_budget))) = (trace.as_mut(), before) {
            trace.push(RoundRecord {
                draw,
                outcome,
                lambda,
                mu_or_xi,
                remaining_budget,
            });
        }
    }

    let t = horizon as f64;
    let rhos = market.rhos();
    let bidders = (0..k)
        .map(|i| BidderSummary {
            avg_utility: utility[i] / t,
            avg_expenditure: spent[i] / t,
            avg_value: value[i] / t,
            win_rate: wins[i] as f64 / t,
            final_multiplier: state.active_multipliers()[i],
            final_lambda: (strategy == Strategy::Hp).then(|| state.lambda[i]),
            diagnostics: acc[i].finish(rhos[i]).ok(),
            projection_error_rate: state.projection_error_events[i] as f64 / t,
        })
        .collect();
    Ok(Simulation {
        trace,
        summary: SimulationSummary {
            strategy,
            horizon,
            bidders,
            ending_time,
        },
    })
}

/// Simulate one repetition with draws from the market's own laws.
pub fn run_simulation(
    market: &MarketConfig,
    strategy: Strategy,
    stream: &RngStream,
    experiment: u64,
    repetition: u64,
) -> Result<Simulation> {
    let draws = DrawSource::new(market, stream, experiment, repetition);
    simulate(market, strategy, draws, DEFAULT_WINDOW)
}

/// Diagnostics recomputed from a full trace.
pub fn convergence_diagnostics(trace: &[RoundRecord], rhos: &[f64], window: usize) -> Result<Vec<Diagnostics>> {
    (0..rhos.len())
        .map(|k| {
            let m: Vec<f64> = trace
                .iter()
                .map(|r| r.mu_or_xi.as_ref().or(r.lambda.as_ref()).map_or(0.0, |v| v[k]))
                .collect();
            let z: Vec<f64> = trace.iter().map(|r| r.outcome.expenditure[k]).collect();
            diagnostics_of(&m, &z, rhos[k], window)
        })
        .collect()
}

pub const TRACE_COLUMNS: [&str; 13] = [
    "round",
    "bidder",
    "value",
    "internal_bid",
    "external_bid",
    "competing",
    "won",
    "expenditure",
    "pseudo_expenditure",
    "utility",
    "lambda",
    "mu_or_xi",
    "remaining_budget",
];

/// Write a trace with one row per (round, bidder).
pub fn write_trace(path: &Path, trace: &[RoundRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_COLUMNS)?;
    for r in trace {
        let o = &r.outcome;
        for k in 0..r.draw.values.len() {
            w.write_record([
                r.draw.round.to_string(),
                k.to_string(),
                fmt_f64(r.draw.values[k]),
                fmt_opt(o.internal_bids.as_ref().map(|v| v[k])),
                fmt_f64(o.bids[k]),
                fmt_f64(o.competing[k]),
                u8::from(o.allocation[k]).to_string(),
                fmt_f64(o.expenditure[k]),
                fmt_opt(o.pseudo_expenditure.as_ref().map(|v| v[k])),
                fmt_f64(o.utility[k]),
                fmt_opt(r.lambda.as_ref().map(|v| v[k])),
                fmt_opt(r.mu_or_xi.as_ref().map(|v| v[k])),
                fmt_f64(r.remaining_budget[k]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
