//! Scenario files.
//!
//! A scenario is one TOML document. `[market]` describes the coalition; the
//! other tables configure individual commands and may be omitted.
//!
//! ```toml
//! seed = 7
//!
//! [market]
//! horizon = 20000
//! step = { kind = "inverse-sqrt", c = 0.1 }
//! outside = { kind = "uniform", lo = 0.0, hi = 1.0 }
//!
//! [[market.bidders]]
//! rho = 0.2
//! multiplier_cap = 5.0
//! value = { kind = "uniform", lo = 0.0, hi = 1.0 }
//!
//! [sweep]
//! rho_grid = [0.1, 0.2, 0.3]
//! repetitions = 20
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::DEFAULT_WINDOW;
use crate::equilibrium::SolverConfig;
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::market::{MarketConfig, Strategy};

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_repetitions() -> usize {
    20
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "simulate_default_strategies")]
    pub strategies: Vec<Strategy>,
}

fn simulate_default_strategies() -> Vec<Strategy> {
    vec![Strategy::Ip]
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            strategies: simulate_default_strategies(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Explicit grid of common target rates.
    #[serde(default)]
    pub rho_grid: Vec<f64>,
    /// Alternative to `rho_grid`: rates `step * a` for `a = 1..=count`.
    #[serde(default)]
    pub rho_step: Option<f64>,
    #[serde(default)]
    pub rho_count: Option<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    /// Per-bidder rates drawn around the grid value with this spread.
    #[serde(default)]
    pub rho_sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleSection {
    pub p: f64,
    pub eta: f64,
    #[serde(default = "counterexample_horizon")]
    pub horizon: usize,
    #[serde(default = "counterexample_repetitions")]
    pub repetitions: usize,
    /// Number of points on each averaged utility curve.
    #[serde(default = "counterexample_checkpoints")]
    pub checkpoints: usize,
}

fn counterexample_horizon() -> usize {
    20_000
}

fn counterexample_repetitions() -> usize {
    100
}

fn counterexample_checkpoints() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisreportSection {
    pub deviator: usize,
    pub reported_rho: f64,
    #[serde(default = "counterexample_repetitions")]
    pub repetitions: usize,
    #[serde(default = "misreport_strategy")]
    pub strategy: Strategy,
}

fn misreport_strategy() -> Strategy {
    Strategy::Ip
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Quadrature for `K <= 2`, Monte Carlo otherwise.
    Auto,
    Quadrature,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "solver_tol")]
    pub tol: f64,
    #[serde(default = "solver_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub eta0: Option<f64>,
    #[serde(default = "estimator_auto")]
    pub estimator: EstimatorKind,
    #[serde(default = "solver_samples")]
    pub samples: usize,
    #[serde(default = "quadrature_tol")]
    pub quadrature_tol: f64,
}

fn solver_tol() -> f64 {
    1e-3
}

fn solver_max_iter() -> usize {
    2000
}

fn estimator_auto() -> EstimatorKind {
    EstimatorKind::Auto
}

fn solver_samples() -> usize {
    100_000
}

fn quadrature_tol() -> f64 {
    1e-10
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: solver_tol(),
            max_iter: solver_max_iter(),
            eta0: None,
            estimator: estimator_auto(),
            samples: solver_samples(),
            quadrature_tol: quadrature_tol(),
        }
    }
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            eta0: self.eta0,
            ..SolverConfig::default()
        }
    }

    pub fn estimator(&self, market: &MarketConfig, seed: u64) -> Estimator {
        let quad = match self.estimator {
            EstimatorKind::Auto => market.k() <= 2,
            EstimatorKind::Quadrature => true,
            EstimatorKind::MonteCarlo => false,
        };
        if quad {
            Estimator::quadrature(self.quadrature_tol)
        } else {
            Estimator::monte_carlo(market, self.samples, seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotonicitySection {
    pub grid_width: f64,
    /// Lower corner of the grid box (zeros by default).
    #[serde(default)]
    pub lo: Vec<f64>,
    /// Upper corner of the grid box (the multiplier caps by default).
    #[serde(default)]
    pub hi: Vec<f64>,
    #[serde(default = "misreport_strategy")]
    pub family: Strategy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HindsightSection {
    #[serde(default = "hindsight_horizon")]
    pub horizon: usize,
    #[serde(default = "hindsight_instances")]
    pub instances: usize,
    #[serde(default = "solver_samples")]
    pub dual_samples: usize,
}

fn hindsight_horizon() -> usize {
    12
}

fn hindsight_instances() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    /// Bid log, relative paths resolved against the scenario file.
    pub path: PathBuf,
    /// Number of empirical bidders to build.
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_window")]
    pub window: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection { window: DEFAULT_WINDOW }
    }
}

/// A whole scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub market: Option<MarketConfig>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub counterexample: Option<CounterexampleSection>,
    #[serde(default)]
    pub misreport: Option<MisreportSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub monotonicity: Option<MonotonicitySection>,
    #[serde(default)]
    pub hindsight: Option<HindsightSection>,
    #[serde(default)]
    pub ingest: Option<IngestSection>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

impl Scenario {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(ingest) = s.ingest.as_mut() {
            if ingest.path.is_relative() {
                if let Some(dir) = path.parent() {
                    ingest.path = dir.join(&ingest.path);
                }
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, path)
    }

    /// The `[market]` table, which most commands need.
    pub fn market(&self) -> Result<&MarketConfig> {
        let m = self
            .market
            .as_ref()
            .ok_or_else(|| Error::Config("scenario has no [market] table".into()))?;
        m.validate()?;
        Ok(m)
    }

    /// Short content hash stamped on every summary row.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
seed = 3

[market]
horizon = 1000
outside = { kind = "uniform", lo = 0.0, hi = 1.0 }

[[market.bidders]]
rho = 0.2
multiplier_cap = 5.0
value = { kind = "truncated-gaussian", mean = 0.5, sd = 0.2, lo = 0.0, hi = 1.0 }

[sweep]
rho_grid = [0.1, 0.2]
repetitions = 2
strategies = ["ip", "cp"]
"#;

    #[test]
    fn parses_and_hashes() {
        let s = Scenario::from_toml(TEXT, Path::new("x.toml")).unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.market().unwrap().k(), 1);
        assert_eq!(s.sweep.as_ref().unwrap().strategies, vec![Strategy::Ip, Strategy::Cp]);
        assert_eq!(s.hash().len(), 16);
        assert_eq!(s.hash(), Scenario::from_toml(TEXT, Path::new("y.toml")).unwrap().hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = TEXT.replace("repetitions = 2", "repetitions = 2\ncolour = 1");
        assert!(matches!(Scenario::from_toml(&bad, Path::new("x.toml")), Err(Error::Parse { .. })));
        let bad = TEXT.replace("rho = 0.2", "rho = 0.2\nbudget = 4");
        assert!(Scenario::from_toml(&bad, Path::new("x.toml")).is_err());
    }

    #[test]
    fn invalid_market_is_a_config_error() {
        let bad = TEXT.replace("multiplier_cap = 5.0", "multiplier_cap = 1.0");
        let s = Scenario::from_toml(&bad, Path::new("x.toml")).unwrap();
        assert!(matches!(s.market(), Err(Error::Config(_))));
    }
}
