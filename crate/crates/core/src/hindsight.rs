//! Hindsight-optimal coalition welfare and its Lagrangian upper bound.

use crate::equilibrium::{solve_projected, SolverConfig};
use crate::error::{Error, Result};
use crate::estimators::{Estimate, Estimator, Family, Point, SampleBank};
use crate::market::MarketConfig;
use crate::rng::RngStream;

pub const MAX_EXACT_BIDDERS: usize = 3;
pub const MAX_EXACT_ROUNDS: usize = 20;
pub const MAX_ENUMERATION_ROUNDS: usize = 12;

/// Realized values and outside bids of a whole horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct HindsightInstance {
    /// `values[t][k]`.
    pub values: Vec<Vec<f64>>,
    pub outside: Vec<f64>,
    pub rhos: Vec<f64>,
}

impl HindsightInstance {
    pub fn new(values: Vec<Vec<f64>>, outside: Vec<f64>, rhos: Vec<f64>) -> Result<Self> {
        if values.len() != outside.len() {
            return Err(Error::Config("values and outside bids differ in length".into()));
        }
        if values.iter().any(|row| row.len() != rhos.len()) {
            return Err(Error::Config("every round needs one value per bidder".into()));
        }
        let all = values.iter().flatten().chain(&outside).chain(&rhos);
        if all.clone().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config("hindsight entries must be finite and nonnegative".into()));
        }
        Ok(HindsightInstance { values, outside, rhos })
    }

    pub fn horizon(&self) -> usize {
        self.outside.len()
    }

    pub fn k(&self) -> usize {
        self.rhos.len()
    }

    pub fn capacities(&self) -> Vec<f64> {
        let t = self.horizon() as f64;
        self.rhos.iter().map(|r| r * t).collect()
    }

    /// Welfare of an allocation, or `None` if it breaks a budget or gives a round twice.
    pub fn evaluate(&self, allocation: &[Vec<bool>]) -> Option<f64> {
        let caps = self.capacities();
        let mut spent = vec![0.0; self.k()];
        let mut welfare = 0.0;
        for (t, row) in allocation.iter().enumerate() {
            if row.iter().filter(|&&x| x).count() > 1 {
                return None;
            }
            for (k, &x) in row.iter().enumerate() {
                if x {
                    spent[k] += self.outside[t];
                    welfare += self.values[t][k] - self.outside[t];
                }
            }
        }
        spent.iter().zip(&caps).all(|(s, c)| s <= c).then_some(welfare)
    }

    /// Per-round dual function `Phi(mu)` on this instance.
    pub fn dual_bound(&self, mu: &[f64]) -> f64 {
        let t = self.horizon() as f64;
        let surplus: f64 = (0..self.horizon()).map(|r| self.best_surplus(r, mu)).sum();
        surplus / t + self.rhos.iter().zip(mu).map(|(r, m)| r * m).sum::<f64>()
    }

    fn best_surplus(&self, t: usize, mu: &[f64]) -> f64 {
        let d = self.outside[t];
        self.values[t]
            .iter()
            .zip(mu)
            .map(|(v, m)| v - (1.0 + m) * d)
            .fold(0.0, f64::max)
    }
}

/// Optimal hindsight welfare and allocation.
#[derive(Clone, Debug, PartialEq)]
pub struct HindsightSolution {
    pub welfare: f64,
    /// `allocation[t][k]`.
    pub allocation: Vec<Vec<bool>>,
}

fn check_size(inst: &HindsightInstance, max_rounds: usize) -> Result<()> {
    if inst.k() > MAX_EXACT_BIDDERS || inst.horizon() > max_rounds {
        return Err(Error::TooLarge(format!(
            "K = {}, T = {} (limits K <= {MAX_EXACT_BIDDERS}, T <= {max_rounds})",
            inst.k(),
            inst.horizon()
        )));
    }
    Ok(())
}

fn to_allocation(choice: &[Option<usize>], k: usize) -> Vec<Vec<bool>> {
    choice
        .iter()
        .map(|c| (0..k).map(|i| *c == Some(i)).collect())
        .collect()
}

/// Exhaustive search over all `(K + 1)^T` allocations.
pub fn hindsight_enumerate(inst: &HindsightInstance) -> Result<HindsightSolution> {
    check_size(inst, MAX_ENUMERATION_ROUNDS)?;
    let (t_len, k) = (inst.horizon(), inst.k());
    let base = k + 1;
    let total = base.pow(t_len as u32);
    let mut best = (0.0, vec![None; t_len]);
    let mut choice = vec![None; t_len];
    for code in 0..total {
        let mut c = code;
        for slot in choice.iter_mut() {
            let digit = c % base;
            c /= base;
            *slot = (digit > 0).then(|| digit - 1);
        }
        if let Some(w) = inst.evaluate(&to_allocation(&choice, k)) {
            if w > best.0 {
                best = (w, choice.clone());
            }
        }
    }
    Ok(HindsightSolution {
        welfare: best.0,
        allocation: to_allocation(&best.1, k),
    })
}

struct Search<'a> {
    inst: &'a HindsightInstance,
    caps: Vec<f64>,
    /// Multiplier vectors used for bounds, with suffix sums of their surplus.
    bounds: Vec<(Vec<f64>, Vec<f64>)>,
    choice: Vec<Option<usize>>,
    spent: Vec<f64>,
    best: f64,
    best_choice: Vec<Option<usize>>,
}

impl Search<'_> {
    fn bound(&self, t: usize) -> f64 {
        self.bounds
            .iter()
            .map(|(mu, suffix)| {
                suffix[t]
                    + mu.iter()
                        .zip(self.caps.iter().zip(&self.spent))
                        .map(|(m, (c, s))| m * (c - s).max(0.0))
                        .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn dfs(&mut self, t: usize, welfare: f64) {
        if welfare > self.best {
            self.best = welfare;
            self.best_choice = self.choice.clone();
        }
        if t == self.inst.horizon() || welfare + self.bound(t) <= self.best + 1e-15 {
            return;
        }
        let d = self.inst.outside[t];
        // most valuable bidders first so good incumbents appear early
        let mut order: Vec<usize> = (0..self.inst.k()).filter(|&k| self.inst.values[t][k] > d).collect();
        order.sort_by(|&a, &b| self.inst.values[t][b].total_cmp(&self.inst.values[t][a]));
        for k in order {
            let before = self.spent[k];
            let after = before + d;
            if after <= self.caps[k] {
                self.spent[k] = after;
                self.choice[t] = Some(k);
                self.dfs(t + 1, welfare + self.inst.values[t][k] - d);
                self.spent[k] = before;
                self.choice[t] = None;
            }
        }
        self.dfs(t + 1, welfare);
    }
}

/// Exact hindsight welfare by branch and bound with Lagrangian bounds.
pub fn hindsight_exact(inst: &HindsightInstance) -> Result<HindsightSolution> {
    check_size(inst, MAX_EXACT_ROUNDS)?;
    let (t_len, k) = (inst.horizon(), inst.k());
    let mut bounds = Vec::new();
    let mut mu = vec![0.0; k];
    let mut candidates = vec![mu.clone()];
    // a few subgradient steps give a tighter multiplier than zero
    let mut best_val = inst.dual_bound(&mu);
    for n in 1..=60 {
        let mut used = vec![0.0; k];
        for t in 0..t_len {
            let d = inst.outside[t];
            let (arg, val) = (0..k)
                .map(|i| (i, inst.values[t][i] - (1.0 + mu[i]) * d))
                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            if val > 0.0 {
                used[arg] += d / t_len as f64;
            }
        }
        for i in 0..k {
            mu[i] = (mu[i] - (inst.rhos[i] - used[i]) / (n as f64).sqrt()).max(0.0);
        }
        let v = inst.dual_bound(&mu);
        if v < best_val {
            best_val = v;
            candidates.push(mu.clone());
        }
    }
    candidates.dedup();
    for mu in candidates.into_iter().rev().take(3) {
        let mut suffix = vec![0.0; t_len + 1];
        for t in (0..t_len).rev() {
            suffix[t] = suffix[t + 1] + inst.best_surplus(t, &mu);
        }
        bounds.push((mu, suffix));
    }
    let mut search = Search {
        inst,
        caps: inst.capacities(),
        bounds,
        choice: vec![None; t_len],
        spent: vec![0.0; k],
        best: 0.0,
        best_choice: vec![None; t_len],
    };
    search.dfs(0, 0.0);
    Ok(HindsightSolution {
        welfare: search.best,
        allocation: to_allocation(&search.best_choice, k),
    })
}

/// `Phi(mu)` for a market, estimated on a sample bank.
pub fn market_dual_bound(market: &MarketConfig, bank: &SampleBank, mu: &[f64]) -> Result<Estimate> {
    if mu.len() != market.k() || bank.k() != market.k() || mu.iter().any(|&m| !(m >= 0.0)) {
        return Err(Error::Config("dual bound needs K nonnegative multipliers".into()));
    }
    let n = bank.len() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..bank.len() {
        let (values, d) = bank.row(i);
        let s = values.iter().zip(mu).map(|(v, m)| v - (1.0 + m) * d).fold(0.0, f64::max);
        sum += s;
        sum_sq += s * s;
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    let linear: f64 = market.rhos().iter().zip(mu).map(|(r, m)| r * m).sum();
    Ok(Estimate {
        mean: mean + linear,
        std_error: (var / n).sqrt(),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct DualConfig {
    pub samples: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig {
            samples: 100_000,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DualSolution {
    pub mu: Vec<f64>,
    pub value: Estimate,
    /// Selection-aware expected expenditure at `mu`.
    pub selection_expenditure: Vec<f64>,
    /// `|mu_k (rho_k - G^S_k)|` and `max(0, G^S_k - rho_k)`.
    pub residuals: Vec<f64>,
    pub slack: Vec<f64>,
    pub converged: bool,
}

/// Approximate minimizer of the Monte Carlo dual.
///
/// The dual is convex with subgradient `rho - G^S(mu)`, so its minimizers are
/// the solutions of `mu >= 0 ⊥ G^S(mu) <= rho`; projected steps along the
/// negative subgradient are taken until that system holds.
pub fn minimize_dual(market: &MarketConfig, config: &DualConfig) -> Result<DualSolution> {
    market.validate()?;
    let bank = SampleBank::draw(market, config.samples, &RngStream::new(config.seed), 1);
    let estimator = Estimator::MonteCarlo(bank);
    let rho = market.rhos();
    let caps = market.caps();
    let map = |mu: &[f64]| {
        estimator
            .expenditure(market, Family::Selection, Point::new(mu))
            .expect("validated market and multipliers")
    };
    let (mu, g, _, converged) = solve_projected(map, &rho, &caps, &vec![0.0; market.k()], &config.solver);
    let Estimator::MonteCarlo(bank) = &estimator else { unreachable!() };
    let value = market_dual_bound(market, bank, &mu)?;
    let residuals = mu.iter().zip(&g).zip(&rho).map(|((m, g), r)| (m * (r - g)).abs()).collect();
    let slack = g.iter().zip(&rho).map(|(g, r)| (g - r).max(0.0)).collect();
    Ok(DualSolution {
        mu,
        value,
        selection_expenditure: g,
        residuals,
        slack,
        converged,
    })
}
