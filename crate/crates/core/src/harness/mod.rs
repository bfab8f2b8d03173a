//! Scenario files, sweeps, named experiments and bid-log ingestion.

pub mod config;
pub mod experiments;
pub mod ingest;
pub mod sweep;

pub use config::Scenario;
pub use experiments::{counterexample_market, run_counterexample, run_misreport, MisreportSpec};
pub use ingest::{ingest_bid_log, BidLogRecord, IngestResult};
pub use sweep::{run_sweep, write_summary, Band, SummaryRow, SweepSpec};
