//! Complementarity solvers for the equilibrium multipliers and the
//! grid estimate of the strong-monotonicity constant.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{Estimator, Evaluation, Family, Point};
use crate::io::{csv_writer, fmt_f64};
use crate::market::MarketConfig;
use crate::rng::{RngStream, StreamRole};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Bound on both the complementarity residual and the constraint slack.
    pub tol: f64,
    pub max_iter: usize,
    /// Plain schedule `eta0 / sqrt(n)` when set; otherwise steps are scaled
    /// per coordinate by a finite-difference slope of the own map.
    pub eta0: Option<f64>,
    /// Half-width of the finite differences.
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-3,
            max_iter: 2000,
            eta0: None,
            fd_step: 5e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumResult {
    pub family: Family,
    /// lambda*, xi* or mu* depending on the family.
    pub multipliers: Vec<f64>,
    /// lambda* paired with mu* for the hybrid family.
    pub lambda: Option<Vec<f64>>,
    /// Map value at the returned multipliers.
    pub expenditure: Vec<f64>,
    /// `|x_k (rho_k - G_k)|`.
    pub residuals: Vec<f64>,
    /// `max(0, G_k - rho_k)`.
    pub slack: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Bidders whose hybrid bisection did not bracket a root.
    pub flagged: Vec<usize>,
}

impl EquilibriumResult {
    pub fn max_violation(&self) -> f64 {
        self.residuals.iter().chain(&self.slack).fold(0.0, |a, &b| a.max(b))
    }

    /// The evaluation point matching this result.
    pub fn point(&self) -> Point<'_> {
        match &self.lambda {
            Some(l) => Point::hybrid(l, &self.multipliers),
            None => Point::new(&self.multipliers),
        }
    }
}

fn violations(x: &[f64], g: &[f64], rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let r = x.iter().zip(g).zip(rho).map(|((x, g), r)| (x * (r - g)).abs()).collect();
    let s = g.iter().zip(rho).map(|(g, r)| (g - r).max(0.0)).collect();
    (r, s)
}

fn merit(x: &[f64], g: &[f64], rho: &[f64]) -> f64 {
    let (r, s) = violations(x, g, rho);
    r.iter().chain(&s).fold(0.0, |a, &b| a.max(b))
}

/// Solve `x >= 0 ⊥ G(x) <= rho` by projected iteration for a generic map.
///
/// `map` returns the full vector `G(x)`. Without `eta0` every coordinate
/// moves by `theta * (G_k - rho_k) / s_k`, where `s_k` is a central difference
/// of `-G_k` in its own multiplier and `theta` backtracks on the largest
/// violation.
pub fn solve_projected<F>(map: F, rho: &[f64], caps: &[f64], start: &[f64], config: &SolverConfig) -> (Vec<f64>, Vec<f64>, usize, bool)
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let k = rho.len();
    let project = |x: &mut Vec<f64>| {
        for (v, c) in x.iter_mut().zip(caps) {
            *v = v.max(0.0).min(*c);
        }
    };
    let mut x = start.to_vec();
    project(&mut x);
    let mut g = map(&x);
    let mut m = merit(&x, &g, rho);
    let mut best = (x.clone(), g.clone(), m);
    let mut theta = 1.0;
    for n in 1..=config.max_iter {
        if m < config.tol {
            return (x, g, n - 1, true);
        }
        let mut trial = x.clone();
        match config.eta0 {
            Some(eta0) => {
                let eta = eta0 / (n as f64).sqrt();
                for i in 0..k {
                    trial[i] -= eta * (rho[i] - g[i]);
                }
            }
            None => {
                for i in 0..k {
                    let h = config.fd_step;
                    let (lo, hi) = ((x[i] - h).max(0.0), (x[i] + h).min(caps[i]));
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[i] = lo;
                    b[i] = hi;
                    let slope = ((map(&a)[i] - map(&b)[i]) / (hi - lo)).max(1e-6);
                    let step = (theta * (rho[i] - g[i]) / slope).clamp(-caps[i], caps[i]);
                    trial[i] -= step;
                }
            }
        }
        project(&mut trial);
        let gt = map(&trial);
        let mt = merit(&trial, &gt, rho);
        if config.eta0.is_some() || mt < m || theta < 1e-6 {
            if config.eta0.is_none() {
                theta = if mt < m { (theta * 1.5).min(1.0) } else { 1.0 / (n as f64).sqrt() };
            }
            x = trial;
            g = gt;
            m = mt;
            if m < best.2 {
                best = (x.clone(), g.clone(), m);
            }
        } else {
            theta *= 0.5;
        }
    }
    let converged = best.2 < config.tol;
    (best.0, best.1, config.max_iter, converged)
}

/// Equilibrium multipliers of the individual (`Family::Ip`) or coordinated
/// (`Family::Cp`) dynamics.
pub fn solve_ncp(market: &MarketConfig, family: Family, estimator: &Estimator, config: &SolverConfig) -> Result<EquilibriumResult> {
    if !matches!(family, Family::Ip | Family::Cp) {
        return Err(Error::Config("solve_ncp handles the IP and CP maps".into()));
    }
    market.validate()?;
    let rho = market.rhos();
    let caps = market.caps();
    let failure = std::sync::Mutex::new(None);
    let map = |x: &[f64]| match estimator.expenditure(market, family, Point::new(x)) {
        Ok(g) => g,
        Err(e) => {
            failure.lock().unwrap().get_or_insert(e);
            vec![0.0; x.len()]
        }
    };
    let (x, g, iterations, converged) = solve_projected(map, &rho, &caps, &market.initial(), config);
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let (residuals, slack) = violations(&x, &g, &rho);
    Ok(EquilibriumResult {
        family,
        multipliers: x,
        lambda: None,
        expenditure: g,
        residuals,
        slack,
        iterations,
        converged,
        flagged: Vec::new(),
    })
}

/// External multipliers of the hybrid dynamics given `lambda*`.
///
/// Each `mu_k` solves `G^HP_k(mu_k, lambda*) = rho_k` on `[0, lambda*_k]` by
/// bisection, or is 0 when the budget does not bind at `mu_k = 0`.
pub fn solve_hp_equilibrium(market: &MarketConfig, lambda_star: &EquilibriumResult, estimator: &Estimator, tol: f64) -> Result<EquilibriumResult> {
    if lambda_star.family != Family::Ip {
        return Err(Error::Config("hybrid equilibrium needs the IP solution".into()));
    }
    let lambda = &lambda_star.multipliers;
    let rho = market.rhos();
    let k = market.k();
    let mut mu = vec![0.0; k];
    let mut g = vec![0.0; k];
    let mut flagged = Vec::new();
    let mut evaluations = 0;
    for i in 0..k {
        let mut probe = lambda.clone();
        let mut eval = |m: f64| -> Result<f64> {
            probe[i] = m;
            evaluations += 1;
            Ok(estimator
                .evaluate_bidder(market, Family::Hp, Point::hybrid(lambda, &probe), i)?
                .expenditure
                .mean)
        };
        let g0 = eval(0.0)?;
        if g0 <= rho[i] {
            g[i] = g0;
            continue;
        }
        let g_top = eval(lambda[i])?;
        if g_top > rho[i] {
            flagged.push(i);
            mu[i] = lambda[i];
            g[i] = g_top;
            continue;
        }
        let (mut lo, mut hi) = (0.0, lambda[i]);
        let (mut g_lo, mut g_hi) = (g0, g_top);
        while hi - lo > 1e-9 * (1.0 + hi) {
            let mid = 0.5 * (lo + hi);
            let gm = eval(mid)?;
            if gm > rho[i] {
                lo = mid;
                g_lo = gm;
            } else {
                hi = mid;
                g_hi = gm;
            }
            if (g_lo - rho[i]).abs() < tol * 1e-3 {
                break;
            }
        }
        // the upper end keeps the budget constraint satisfied
        mu[i] = hi;
        g[i] = g_hi;
        let _ = g_lo;
    }
    let (residuals, slack) = violations(&mu, &g, &rho);
    let converged = flagged.is_empty() && residuals.iter().chain(&slack).all(|&v| v < tol);
    Ok(EquilibriumResult {
        family: Family::Hp,
        multipliers: mu,
        lambda: Some(lambda.clone()),
        expenditure: g,
        residuals,
        slack,
        iterations: evaluations,
        converged,
        flagged,
    })
}

/// Per-round `U`, `V`, `G` of every bidder at a solved equilibrium.
pub fn equilibrium_utilities(result: &EquilibriumResult, market: &MarketConfig, estimator: &Estimator) -> Result<Vec<Evaluation>> {
    estimator.evaluate(market, result.family, result.point())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub grid_width: f64,
    pub gamma_hat: f64,
    pub violating_pair: Option<(Vec<f64>, Vec<f64>)>,
    pub pairs: usize,
}

/// Smallest `(x - y)^T (G(y) - G(x)) / |x - y|^2` over neighbouring grid points.
///
/// Points are compared with every other corner of their grid cell (all pairs
/// for `K <= 2`, `sampled_pairs` random cells otherwise).
pub fn grid_monotonicity<F>(map: F, width: f64, lo: &[f64], hi: &[f64], sampled_pairs: usize, seed: u64) -> Result<MonotonicityReport>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let k = lo.len();
    if !(width > 0.0) || hi.len() != k || lo.iter().zip(hi).any(|(a, b)| b < a) {
        return Err(Error::Config("monotonicity grid needs a positive width and a nonempty box".into()));
    }
    let counts: Vec<usize> = lo.iter().zip(hi).map(|(a, b)| ((b - a) / width + 1e-9).floor() as usize + 1).collect();
    let coord = |idx: &[usize]| -> Vec<f64> { idx.iter().zip(lo).map(|(&i, &a)| a + i as f64 * width).collect() };
    let ratio = |x: &[f64], gx: &[f64], y: &[f64], gy: &[f64]| -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..x.len() {
            let dx = x[i] - y[i];
            num += dx * (gy[i] - gx[i]);
            den += dx * dx;
        }
        num / den
    };

    let mut best: (f64, Option<(Vec<f64>, Vec<f64>)>) = (f64::INFINITY, None);
    let mut pairs = 0usize;
    let mut consider = |x: &[f64], gx: &[f64], y: &[f64], gy: &[f64]| {
        pairs += 1;
        let r = ratio(x, gx, y, gy);
        if r < best.0 {
            best = (r, Some((x.to_vec(), y.to_vec())));
        }
    };
    let shifted = |idx: &[usize], mask: usize| -> Vec<usize> { idx.iter().enumerate().map(|(d, &i)| i + ((mask >> d) & 1)).collect() };

    if k <= 2 {
        let total: usize = counts.iter().product();
        let index = |flat: usize| -> Vec<usize> {
            let mut rest = flat;
            let mut out = vec![0; k];
            for d in (0..k).rev() {
                out[d] = rest % counts[d];
                rest /= counts[d];
            }
            out
        };
        let flat = |idx: &[usize]| idx.iter().zip(&counts).fold(0, |acc, (&i, &c)| acc * c + i);
        let inside = |idx: &[usize]| idx.iter().zip(&counts).all(|(&i, &c)| i < c);
        let values: Vec<Vec<f64>> = (0..total).into_par_iter().map(|f| map(&coord(&index(f)))).collect();
        // every edge and diagonal of every cell, each counted once
        let mut cell_pairs: Vec<(usize, usize)> = (1..1usize << k).map(|m| (0, m)).collect();
        if k == 2 {
            cell_pairs.push((1, 2));
        }
        for f in 0..total {
            let idx = index(f);
            for &(ma, mb) in &cell_pairs {
                let (a, b) = (shifted(&idx, ma), shifted(&idx, mb));
                if inside(&a) && inside(&b) {
                    consider(&coord(&a), &values[flat(&a)], &coord(&b), &values[flat(&b)]);
                }
            }
        }
    } else {
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::Config("sampled monotonicity needs at least two grid points per axis".into()));
        }
        let mut rng = RngStream::new(seed).at(u64::MAX, 0, StreamRole::Auxiliary(0), 0);
        for _ in 0..sampled_pairs {
            let cell: Vec<usize> = counts.iter().map(|&c| rng.gen_range(0..c - 1)).collect();
            let ma = rng.gen_range(0..1usize << k);
            let mut mb = rng.gen_range(0..(1usize << k) - 1);
            if mb >= ma {
                mb += 1;
            }
            let (x, y) = (coord(&shifted(&cell, ma)), coord(&shifted(&cell, mb)));
            let (gx, gy) = (map(&x), map(&y));
            consider(&x, &gx, &y, &gy);
        }
    }
    if pairs == 0 {
        return Err(Error::Config("monotonicity grid has a single point".into()));
    }
    Ok(MonotonicityReport {
        grid_width: width,
        gamma_hat: best.0,
        violating_pair: if best.0 < 0.0 { best.1 } else { None },
        pairs,
    })
}

/// Grid estimate of the monotonicity constant of a family's expenditure map.
pub fn check_monotonicity(market: &MarketConfig, family: Family, estimator: &Estimator, width: f64, lo: &[f64], hi: &[f64]) -> Result<MonotonicityReport> {
    if family == Family::Hp || family == Family::Selection {
        return Err(Error::Config("monotonicity is checked for the IP and CP maps".into()));
    }
    let caps = market.caps();
    if lo.len() != market.k() || hi.iter().zip(&caps).any(|(h, c)| *h > c + 1e-12) || lo.iter().any(|&l| l < 0.0) {
        return Err(Error::Config("monotonicity box must lie within [0, cap]".into()));
    }
    let failure = std::sync::Mutex::new(None);
    let map = |x: &[f64]| match estimator.expenditure(market, family, Point::new(x)) {
        Ok(g) => g,
        Err(e) => {
            failure.lock().unwrap().get_or_insert(e);
            vec![0.0; x.len()]
        }
    };
    let report = grid_monotonicity(map, width, lo, hi, 100_000, 0)?;
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(report)
}

pub const EQUILIBRIA_COLUMNS: [&str; 6] = ["family", "bidder", "multiplier", "residual", "slack", "iterations"];

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Ip => "IP",
        Family::Cp => "CP",
        Family::Hp => "HP",
        Family::Selection => "selection",
    }
}

pub fn write_equilibria(path: &Path, results: &[EquilibriumResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EQUILIBRIA_COLUMNS)?;
    for r in results {
        for k in 0..r.multipliers.len() {
            w.write_record([
                family_name(r.family).to_string(),
                k.to_string(),
                fmt_f64(r.multipliers[k]),
                fmt_f64(r.residuals[k]),
                fmt_f64(r.slack[k]),
                r.iterations.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
