//! Shared fixtures for the criterion benchmarks.

use pacing_core::{BidderSpec, Distribution, MarketConfig};

/// `k` bidders with truncated normal values against a uniform outside bid.
pub fn symmetric_market(k: usize, rho: f64, horizon: usize) -> MarketConfig {
    let v = Distribution::truncated_gaussian(0.5, 0.2, 0.0, 1.0).expect("valid law");
    let outside = Distribution::uniform(0.0, 1.0).expect("valid law");
    MarketConfig::new(vec![BidderSpec::new(v, rho, 1.0 / rho + 1.0); k], outside, horizon)
}
