//! Sweeps over target expenditure rates and the summary table they produce.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{csv_writer, fmt_f64, fmt_opt};
use crate::market::{MarketConfig, Strategy};
use crate::rng::{RngStream, StreamRole};
use crate::strategies::{draw_rounds, simulate, SimulationSummary};

/// Aux stream tag for per-bidder rate draws.
const RHO_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: MarketConfig,
    pub rho_grid: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub strategies: Vec<Strategy>,
    /// Per-bidder rates drawn from `N(rho, rho_sd)` when set.
    pub rho_sd: Option<f64>,
    pub window: usize,
    pub scenario: String,
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub rho: f64,
    pub repetition: usize,
    pub bidder: usize,
    pub avg_utility: f64,
    pub avg_expenditure: f64,
    pub win_rate: f64,
    pub final_multiplier: f64,
    pub diag_variance: Option<f64>,
    pub diag_residual: Option<f64>,
    pub seed: u64,
    pub scenario: String,
}

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "strategy",
    "rho",
    "repetition",
    "bidder",
    "avg_utility",
    "avg_expenditure",
    "win_rate",
    "final_multiplier",
    "diag_variance",
    "diag_residual",
    "seed",
    "scenario",
];

impl SummaryRow {
    pub fn from_summary(summary: &SimulationSummary, rho: f64, repetition: usize, seed: u64, scenario: &str) -> Vec<SummaryRow> {
        summary
            .bidders
            .iter()
            .enumerate()
            .map(|(k, b)| SummaryRow {
                strategy: summary.strategy,
                rho,
                repetition,
                bidder: k,
                avg_utility: b.avg_utility,
                avg_expenditure: b.avg_expenditure,
                win_rate: b.win_rate,
                final_multiplier: b.final_multiplier,
                diag_variance: b.diagnostics.map(|d| d.window_variance),
                diag_residual: b.diagnostics.map(|d| d.residual),
                seed,
                scenario: scenario.to_string(),
            })
            .collect()
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.strategy.to_string(),
            fmt_f64(self.rho),
            self.repetition.to_string(),
            self.bidder.to_string(),
            fmt_f64(self.avg_utility),
            fmt_f64(self.avg_expenditure),
            fmt_f64(self.win_rate),
            fmt_f64(self.final_multiplier),
            fmt_opt(self.diag_variance),
            fmt_opt(self.diag_residual),
            self.seed.to_string(),
            self.scenario.clone(),
        ]
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Market of one sweep cell: every bidder targets `rho` (or a draw around it).
///
/// Caps are raised to `v_bar / rho` where the base cap is too small for the cell.
pub fn cell_market(spec: &SweepSpec, rho: f64, cell: u64, repetition: u64) -> Result<MarketConfig> {
    let mut market = spec.base.clone();
    let mut rng = RngStream::new(spec.seed).at(cell, repetition, StreamRole::Auxiliary(RHO_STREAM), 0);
    for b in &mut market.bidders {
        let v_bar = b.v_bar();
        let r = match spec.rho_sd {
            Some(sd) => {
                // Box-Muller on the aux stream keeps the draw reproducible per cell
                let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
                let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                (rho + sd * z).clamp(0.01, 0.99 * v_bar)
            }
            None => rho,
        };
        if !(r > 0.0 && r < v_bar) {
            return Err(Error::Config(format!("sweep rate {r} outside (0, {v_bar})")));
        }
        b.rho = r;
        b.reported_rho = None;
        b.multiplier_cap = b.multiplier_cap.max(v_bar / r);
    }
    market.validate()?;
    Ok(market)
}

/// Run every (rate, repetition) cell; strategies in a cell replay the same rounds.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SummaryRow>> {
    if spec.repetitions == 0 {
        return Err(Error::Config("sweep needs at least one repetition".into()));
    }
    if spec.rho_grid.is_empty() || spec.strategies.is_empty() {
        return Err(Error::Config("sweep needs a rate grid and at least one strategy".into()));
    }
    let cells: Vec<(usize, usize)> = (0..spec.rho_grid.len())
        .flat_map(|i| (0..spec.repetitions).map(move |r| (i, r)))
        .collect();
    let stream = RngStream::new(spec.seed);
    let per_cell: Vec<Result<Vec<SummaryRow>>> = cells
        .par_iter()
        .map(|&(i, rep)| {
            let rho = spec.rho_grid[i];
            let market = cell_market(spec, rho, i as u64, rep as u64)?;
            let draws = draw_rounds(&market, &stream, 0, rep as u64);
            let mut rows = Vec::new();
            for &s in &spec.strategies {
                let sim = simulate(&market, s, draws.iter().cloned(), spec.window)?;
                rows.extend(SummaryRow::from_summary(&sim.summary, rho, rep, spec.seed, &spec.scenario));
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for cell in per_cell {
        rows.extend(cell?);
    }
    rows.sort_by(|a, b| {
        a.strategy
            .cmp(&b.strategy)
            .then(a.rho.total_cmp(&b.rho))
            .then(a.repetition.cmp(&b.repetition))
            .then(a.bidder.cmp(&b.bidder))
    });
    Ok(rows)
}

/// Mean and standard error across repetitions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Band {
    pub fn of(xs: &[f64]) -> Band {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Band { mean, std_error, n }
    }
}

/// Coalition welfare `sum_k avg_utility` per (strategy, rate), banded over repetitions.
pub fn welfare_by_cell(rows: &[SummaryRow]) -> BTreeMap<(Strategy, u64), Band> {
    let mut sums: BTreeMap<(Strategy, u64, usize), f64> = BTreeMap::new();
    for r in rows {
        *sums.entry((r.strategy, r.rho.to_bits(), r.repetition)).or_default() += r.avg_utility;
    }
    let mut grouped: BTreeMap<(Strategy, u64), Vec<f64>> = BTreeMap::new();
    for ((s, rho, _), w) in sums {
        grouped.entry((s, rho)).or_default().push(w);
    }
    grouped.into_iter().map(|(k, v)| (k, Band::of(&v))).collect()
}
