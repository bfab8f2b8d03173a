//! Bid-log ingestion: scale winning prices into `[0, 1]` and split each
//! advertiser's records into empirical value laws.

use std::collections::BTreeMap;
use std::io::Read;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::rng::{RngStream, StreamRole};

/// Aux stream tag for the record split.
const SPLIT_STREAM: u64 = 2;

/// One row of a bid log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidLogRecord {
    pub bidding_price: f64,
    pub paying_price: f64,
    pub advertiser_id: String,
}

#[derive(Clone, Debug)]
pub struct IngestResult {
    /// One empirical law per coalition member.
    pub distributions: Vec<Distribution>,
    /// Advertiser and part index of each law.
    pub parts: Vec<(String, usize)>,
    pub records: usize,
    pub skipped: usize,
}

/// Read a log, scale bidding prices by min-max to `[0, 1]`, and split every
/// advertiser's records at random into `k / advertisers` equal parts.
pub fn ingest_bid_log<R: Read>(source: R, k: usize, seed: u64) -> Result<IngestResult> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut records = Vec::new();
    let mut skipped = 0;
    for row in reader.deserialize::<BidLogRecord>() {
        match row {
            Ok(r) if r.bidding_price >= 0.0 && r.paying_price >= 0.0 && r.bidding_price.is_finite() => records.push(r),
            _ => skipped += 1,
        }
    }
    if records.is_empty() {
        return Err(Error::Config("bid log has no usable records".into()));
    }
    let lo = records.iter().map(|r| r.bidding_price).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.bidding_price).fold(f64::NEG_INFINITY, f64::max);
    let scale = |p: f64| if hi > lo { (p - lo) / (hi - lo) } else { 1.0 };

    let mut by_advertiser: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &records {
        by_advertiser.entry(r.advertiser_id.clone()).or_default().push(scale(r.bidding_price));
    }
    let advertisers = by_advertiser.len();
    if k == 0 || k % advertisers != 0 {
        return Err(Error::Config(format!(
            "K = {k} is not a multiple of the {advertisers} advertisers in the log"
        )));
    }
    let per = k / advertisers;
    let stream = RngStream::new(seed);
    let mut distributions = Vec::with_capacity(k);
    let mut parts = Vec::with_capacity(k);
    for (a, (id, mut prices)) in by_advertiser.into_iter().enumerate() {
        if prices.len() < per {
            return Err(Error::Config(format!("advertiser {id} has fewer records than parts")));
        }
        let mut rng = stream.at(a as u64, 0, StreamRole::Auxiliary(SPLIT_STREAM), 0);
        prices.shuffle(&mut rng);
        let n = prices.len();
        for p in 0..per {
            let chunk = prices[p * n / per..(p + 1) * n / per].to_vec();
            distributions.push(Distribution::empirical(chunk)?);
            parts.push((id.clone(), p));
        }
    }
    Ok(IngestResult {
        distributions,
        parts,
        records: records.len(),
        skipped,
    })
}
