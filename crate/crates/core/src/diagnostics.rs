//! Convergence diagnostics of multiplier trajectories.
//!
//! Two numbers per bidder: the variance of the running-average multiplier
//! over the last `window` rounds, and the complementarity residual
//! `|avg multiplier * (rho - avg expenditure)|`.

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub window_variance: f64,
    pub residual: f64,
}

/// Streaming version, fed one round at a time.
#[derive(Clone, Debug)]
pub struct DiagnosticsAccumulator {
    window: usize,
    rounds: usize,
    multiplier_sum: f64,
    expenditure_sum: f64,
    recent: VecDeque<f64>,
}

impl DiagnosticsAccumulator {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        DiagnosticsAccumulator {
            window,
            rounds: 0,
            multiplier_sum: 0.0,
            expenditure_sum: 0.0,
            recent: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, multiplier: f64, expenditure: f64) {
        self.rounds += 1;
        self.multiplier_sum += multiplier;
        self.expenditure_sum += expenditure;
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(self.multiplier_sum / self.rounds as f64);
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Diagnostics over what has been seen; fails before a full window.
    pub fn finish(&self, rho: f64) -> Result<Diagnostics> {
        if self.rounds < self.window {
            return Err(Error::TraceTooShort {
                len: self.rounds,
                window: self.window,
            });
        }
        let n = self.recent.len() as f64;
        let mean = self.recent.iter().sum::<f64>() / n;
        let window_variance = self.recent.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let t = self.rounds as f64;
        let residual = (self.multiplier_sum / t * (rho - self.expenditure_sum / t)).abs();
        Ok(Diagnostics {
            window_variance,
            residual,
        })
    }
}

/// Diagnostics of a recorded multiplier and expenditure sequence.
pub fn diagnostics_of(multipliers: &[f64], expenditures: &[f64], rho: f64, window: usize) -> Result<Diagnostics> {
    if window == 0 {
        return Err(Error::Config("diagnostic window must be positive".into()));
    }
    let mut acc = DiagnosticsAccumulator::new(window);
    for (&m, &z) in multipliers.iter().zip(expenditures) {
        acc.push(m, z);
    }
    acc.finish(rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sequence_has_zero_variance() {
        let d = diagnostics_of(&[0.7; 500], &[0.2; 500], 0.2, 100).unwrap();
        assert!(d.window_variance < 1e-30);
        assert!(d.residual < 1e-12);
    }

    #[test]
    fn zero_multiplier_gives_zero_residual() {
        let z: Vec<f64> = (0..300).map(|i| (i % 7) as f64 * 0.1).collect();
        let d = diagnostics_of(&[0.0; 300], &z, 0.25, 100).unwrap();
        assert_eq!(d.residual, 0.0);
    }

    #[test]
    fn short_trace_rejected() {
        assert!(matches!(
            diagnostics_of(&[0.1; 50], &[0.0; 50], 0.1, 100),
            Err(Error::TraceTooShort { len: 50, window: 100 })
        ));
    }

    #[test]
    fn variance_of_running_average() {
        // multipliers 0,2,0,2,... : running averages are known in closed form
        let m: Vec<f64> = (0..4).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let d = diagnostics_of(&m, &[0.0; 4], 0.0, 4).unwrap();
        let avgs = [0.0, 1.0, 2.0 / 3.0, 1.0];
        let mean = avgs.iter().sum::<f64>() / 4.0;
        let var = avgs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 4.0;
        assert!((d.window_variance - var).abs() < 1e-15);
    }
}
