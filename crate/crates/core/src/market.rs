//! Market description shared by the simulator, the estimators and the solver.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::Distribution;
use crate::error::{Error, Result};

/// Which pacing algorithm the coalition runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Individual adaptive pacing: every member paces on her own.
    Ip,
    /// Coordinated pacing: the member with the highest shaded bid bids alone.
    Cp,
    /// Hybrid pacing: election on pseudo multipliers, external bid with a separate one.
    Hp,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ip, Strategy::Cp, Strategy::Hp];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ip => "IP",
            Strategy::Cp => "CP",
            Strategy::Hp => "HP",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ip" => Ok(Strategy::Ip),
            "cp" => Ok(Strategy::Cp),
            "hp" => Ok(Strategy::Hp),
            _ => Err(Error::Config(format!("unknown strategy `{s}` (expected IP, CP or HP)"))),
        }
    }
}

/// One coalition member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidderSpec {
    pub value: Distribution,
    /// True target expenditure per round.
    pub rho: f64,
    /// Upper bound of every multiplier of this bidder.
    pub multiplier_cap: f64,
    /// Rate reported to the coalition, if different from the true one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_rho: Option<f64>,
}

impl BidderSpec {
    pub fn new(value: Distribution, rho: f64, multiplier_cap: f64) -> Self {
        BidderSpec {
            value,
            rho,
            multiplier_cap,
            reported_rho: None,
        }
    }

    /// Rate the pacing algorithm targets and whose budget it enforces.
    pub fn effective_rho(&self) -> f64 {
        self.reported_rho.unwrap_or(self.rho)
    }

    pub fn v_bar(&self) -> f64 {
        self.value.support_hi()
    }

    fn validate(&self, k: usize) -> Result<()> {
        let v_bar = self.v_bar();
        let bad = |msg: String| Err(Error::Config(format!("bidder {k}: {msg}")));
        if !(self.rho > 0.0 && self.rho < v_bar) {
            return bad(format!("rho = {} must lie in (0, {v_bar})", self.rho));
        }
        if let Some(r) = self.reported_rho {
            if !(r > 0.0 && r <= self.rho) {
                return bad(format!("reported_rho = {r} must lie in (0, rho]"));
            }
        }
        let needed = v_bar / self.effective_rho();
        if !(self.multiplier_cap >= needed * (1.0 - 1e-12)) || !self.multiplier_cap.is_finite() {
            return bad(format!("multiplier_cap = {} is below v_bar / rho = {needed}", self.multiplier_cap));
        }
        Ok(())
    }
}

/// Step size `epsilon_T = c / sqrt(T)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepSchedule {
    InverseSqrt { c: f64 },
}

impl StepSchedule {
    pub fn epsilon(&self, horizon: usize) -> f64 {
        match *self {
            StepSchedule::InverseSqrt { c } => c / (horizon as f64).sqrt(),
        }
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::InverseSqrt { c: 0.1 }
    }
}

/// Whether simulations keep every round or only streaming summaries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceDetail {
    Full,
    #[default]
    Summary,
}

/// Complete description of a coalition market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub bidders: Vec<BidderSpec>,
    /// Law of the highest bid from outside the coalition.
    pub outside: Distribution,
    pub horizon: usize,
    #[serde(default)]
    pub step: StepSchedule,
    /// Starting multiplier of each bidder (all zero when empty).
    #[serde(default)]
    pub initial_multipliers: Vec<f64>,
    #[serde(default)]
    pub trace_detail: TraceDetail,
}

impl MarketConfig {
    pub fn new(bidders: Vec<BidderSpec>, outside: Distribution, horizon: usize) -> Self {
        MarketConfig {
            bidders,
            outside,
            horizon,
            step: StepSchedule::default(),
            initial_multipliers: Vec::new(),
            trace_detail: TraceDetail::Summary,
        }
    }

    pub fn k(&self) -> usize {
        self.bidders.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.step.epsilon(self.horizon)
    }

    pub fn caps(&self) -> Vec<f64> {
        self.bidders.iter().map(|b| b.multiplier_cap).collect()
    }

    /// Rates targeted by the algorithms (reported where a report exists).
    pub fn rhos(&self) -> Vec<f64> {
        self.bidders.iter().map(BidderSpec::effective_rho).collect()
    }

    pub fn budgets(&self) -> Vec<f64> {
        self.rhos().iter().map(|r| r * self.horizon as f64).collect()
    }

    pub fn v_bar(&self) -> f64 {
        self.bidders.iter().map(BidderSpec::v_bar).fold(0.0, f64::max)
    }

    pub fn initial(&self) -> Vec<f64> {
        if self.initial_multipliers.is_empty() {
            vec![0.0; self.k()]
        } else {
            self.initial_multipliers.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bidders.is_empty() {
            return Err(Error::Config("market needs at least one bidder".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        for (k, b) in self.bidders.iter().enumerate() {
            b.validate(k)?;
        }
        let StepSchedule::InverseSqrt { c } = self.step;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("step constant must be positive, got {c}")));
        }
        let eps = self.epsilon();
        if self.v_bar() * eps >= 1.0 {
            return Err(Error::Config(format!(
                "step too large: v_bar * epsilon = {} must be below 1",
                self.v_bar() * eps
            )));
        }
        if !self.initial_multipliers.is_empty() {
            if self.initial_multipliers.len() != self.k() {
                return Err(Error::Config(format!(
                    "{} initial multipliers for {} bidders",
                    self.initial_multipliers.len(),
                    self.k()
                )));
            }
            for (k, (&m, b)) in self.initial_multipliers.iter().zip(&self.bidders).enumerate() {
                if !(0.0..=b.multiplier_cap).contains(&m) {
                    return Err(Error::Config(format!("bidder {k}: initial multiplier {m} outside [0, cap]")));
                }
            }
        }
        Ok(())
    }
}
