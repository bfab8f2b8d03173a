//! One round of the single-slot second-price auction.

use crate::error::{Error, Result};

/// Values seen by the coalition and the best outside bid in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundDraw {
    /// 1-based round index.
    pub round: usize,
    pub values: Vec<f64>,
    pub outside_bid: f64,
}

/// Result of resolving one round for every coalition member.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    /// Bids posted to the exchange.
    pub bids: Vec<f64>,
    /// Bids used in the internal election (coordinated strategies only).
    pub internal_bids: Option<Vec<f64>>,
    /// `d_k = max(max_{i != k} b_i, d^O)`.
    pub competing: Vec<f64>,
    pub allocation: Vec<bool>,
    pub expenditure: Vec<f64>,
    /// Expenditure fed to the pseudo multiplier of the hybrid strategy.
    pub pseudo_expenditure: Option<Vec<f64>>,
    pub utility: Vec<f64>,
}

impl RoundOutcome {
    /// Index of the coalition member that won the slot, if any.
    pub fn winner(&self) -> Option<usize> {
        self.allocation.iter().position(|&x| x)
    }
}

/// Resolve a round given the posted bids.
///
/// A bid equal to the competing bid wins. If several members tie at the top,
/// the lowest index takes the slot and the others lose.
pub fn resolve_round(draw: &RoundDraw, bids: &[f64]) -> Result<RoundOutcome> {
    let k = draw.values.len();
    if bids.len() != k {
        return Err(Error::Config(format!("{} bids for {} bidders", bids.len(), k)));
    }
    if let Some(b) = bids.iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::Config(format!("bids must be nonnegative, got {b}")));
    }

    // top two bids are enough to get every max over i != k
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut arg = 0;
    for (i, &b) in bids.iter().enumerate() {
        if b > first {
            second = first;
            first = b;
            arg = i;
        } else if b > second {
            second = b;
        }
    }

    let mut out = RoundOutcome {
        bids: bids.to_vec(),
        internal_bids: None,
        competing: Vec::with_capacity(k),
        allocation: vec![false; k],
        expenditure: vec![0.0; k],
        pseudo_expenditure: None,
        utility: vec![0.0; k],
    };
    let mut taken = false;
    for i in 0..k {
        let others = if i == arg { second } else { first };
        let d = others.max(draw.outside_bid);
        out.competing.push(d);
        if !taken && bids[i] >= d {
            taken = true;
            out.allocation[i] = true;
            out.expenditure[i] = d;
            out.utility[i] = draw.values[i] - d;
        }
    }
    Ok(out)
}

/// True iff no bidder's cumulative expenditure ever exceeds her budget.
///
/// The check replays the running remaining budget the same way the
/// strategies do, so a trace they produce passes without rounding slack.
pub fn check_feasibility(trace: &[RoundOutcome], budgets: &[f64]) -> bool {
    let mut remaining = budgets.to_vec();
    for outcome in trace {
        for (rem, &z) in remaining.iter_mut().zip(&outcome.expenditure) {
            if z > *rem {
                return false;
            }
            *rem = (*rem - z).max(0.0);
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draw(values: &[f64], d: f64) -> RoundDraw {
        RoundDraw {
            round: 1,
            values: values.to_vec(),
            outside_bid: d,
        }
    }

    #[test]
    fn truthful_single_bidder_win() {
        let o = resolve_round(&draw(&[0.5], 0.3), &[0.5]).unwrap();
        assert_eq!(o.allocation, vec![true]);
        assert_eq!(o.expenditure, vec![0.3]);
        assert!((o.utility[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn outside_bidder_wins() {
        let o = resolve_round(&draw(&[0.4, 0.3], 0.6), &[0.4, 0.0]).unwrap();
        assert_eq!(o.allocation, vec![false, false]);
        assert_eq!(o.expenditure, vec![0.0, 0.0]);
        assert_eq!(o.utility, vec![0.0, 0.0]);
        assert_eq!(o.winner(), None);
    }

    #[test]
    fn second_price_inside_coalition() {
        let o = resolve_round(&draw(&[0.8, 0.6], 0.5), &[0.8, 0.0]).unwrap();
        assert_eq!(o.allocation, vec![true, false]);
        assert_eq!(o.competing, vec![0.5, 0.8]);
        assert_eq!(o.expenditure[0], 0.5);
        assert!((o.utility[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn ties() {
        // outside tie goes to the bidder
        let o = resolve_round(&draw(&[1.0], 0.5), &[0.5]).unwrap();
        assert!(o.allocation[0]);
        // member tie goes to the lowest index
        let o = resolve_round(&draw(&[1.0, 1.0, 1.0], 0.1), &[0.2, 0.7, 0.7]).unwrap();
        assert_eq!(o.allocation, vec![false, true, false]);
        assert_eq!(o.expenditure[1], 0.7);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(matches!(resolve_round(&draw(&[0.5, 0.5], 0.1), &[0.5]), Err(Error::Config(_))));
        assert!(resolve_round(&draw(&[0.5], 0.1), &[-0.1]).is_err());
    }

    #[test]
    fn feasibility() {
        assert!(check_feasibility(&[], &[1.0]));
        let o = resolve_round(&draw(&[0.5], 0.3), &[0.5]).unwrap();
        assert!(!check_feasibility(std::slice::from_ref(&o), &[0.25]));
        assert!(check_feasibility(&[o.clone(), o], &[0.6]));
    }
}
