pub mod auction;
pub mod chart;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod equilibrium;
pub mod estimators;
pub mod harness;
pub mod hindsight;
pub mod io;
pub mod market;
pub mod quadrature;
pub mod rng;
pub mod strategies;

pub use auction::{check_feasibility, resolve_round, RoundDraw, RoundOutcome};
pub use distributions::{Distribution, DistributionSpec};
pub use error::{Error, Result};
pub use market::{BidderSpec, MarketConfig, StepSchedule, Strategy, TraceDetail};
pub use rng::{RngStream, StreamRole, SubstreamId};
pub use strategies::{run_simulation, simulate, Simulation, SimulationSummary, StrategyState};
