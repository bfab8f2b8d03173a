//! Per-round expected expenditure, value and utility maps.
//!
//! For a multiplier vector every family defines a win event and a price:
//!
//! | family    | win event for bidder k                                   | price |
//! |-----------|----------------------------------------------------------|-------|
//! | IP        | `v_k/(1+l_k) >= d_k`, `d_k = max(max_{i!=k} v_i/(1+l_i), d^O)` | `d_k` |
//! | CP        | same event with CP multipliers                           | `d^O` |
//! | HP        | `v_k/(1+l_k) >= max_{i!=k} v_i/(1+l_i)` and `v_k/(1+m_k) >= d^O` | `d^O` |
//! | selection | `k` maximizes `v_i - (1+m_i) d^O` and `v_k >= (1+m_k) d^O`   | `d^O` |
//!
//! `G` is the expected price paid on the event, `V` the expected value won and
//! `U = V - G`. Monte Carlo estimates reuse one [`SampleBank`] so that maps at
//! different multipliers are compared on the same draws.

use rayon::prelude::*;

use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::market::{MarketConfig, Strategy};
use crate::quadrature::integrate_pieces;
use crate::rng::{RngStream, StreamRole};

/// Rows per parallel chunk; partial sums are merged in chunk order.
const CHUNK: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Ip,
    Cp,
    Hp,
    /// Winner chosen by the dual relaxation's selection rule.
    Selection,
}

impl From<Strategy> for Family {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Ip => Family::Ip,
            Strategy::Cp => Family::Cp,
            Strategy::Hp => Family::Hp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quantity {
    Expenditure,
    Utility,
    Value,
}

/// A mean and its standard error (the integration tolerance for quadrature).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `G`, `U` and `V` of one bidder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub expenditure: Estimate,
    pub utility: Estimate,
    pub value: Estimate,
}

impl Evaluation {
    pub fn get(&self, q: Quantity) -> Estimate {
        match q {
            Quantity::Expenditure => self.expenditure,
            Quantity::Utility => self.utility,
            Quantity::Value => self.value,
        }
    }
}

/// Multipliers at which a map is evaluated.
///
/// `lambda` holds the multipliers of the family (`xi` for CP, `mu` for the
/// selection rule); `mu` is the vector of external multipliers for HP.
#[derive(Clone, Copy, Debug)]
pub struct Point<'a> {
    pub lambda: &'a [f64],
    pub mu: Option<&'a [f64]>,
}

impl<'a> Point<'a> {
    pub fn new(lambda: &'a [f64]) -> Self {
        Point { lambda, mu: None }
    }

    pub fn hybrid(lambda: &'a [f64], mu: &'a [f64]) -> Self {
        Point { lambda, mu: Some(mu) }
    }
}

/// Fixed i.i.d. draws of `(v_1, ..., v_K, d^O)`.
#[derive(Clone, Debug)]
pub struct SampleBank {
    k: usize,
    values: Vec<f64>,
    outside: Vec<f64>,
}

impl SampleBank {
    /// `n` rows; each coordinate reads its own substream of experiment `experiment`.
    pub fn draw(market: &MarketConfig, n: usize, stream: &RngStream, experiment: u64) -> Self {
        let k = market.k();
        let mut values = vec![0.0; n * k];
        for (i, b) in market.bidders.iter().enumerate() {
            let mut rng = stream.at(experiment, 0, StreamRole::Value(i), 0);
            for row in 0..n {
                values[row * k + i] = b.value.sample(&mut rng);
            }
        }
        let mut rng = stream.at(experiment, 0, StreamRole::Outside, 0);
        let outside = (0..n).map(|_| market.outside.sample(&mut rng)).collect();
        SampleBank { k, values, outside }
    }

    pub fn len(&self) -> usize {
        self.outside.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outside.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (&self.values[i * self.k..(i + 1) * self.k], self.outside[i])
    }
}

/// Where the expectations come from.
#[derive(Clone, Debug)]
pub enum Estimator {
    MonteCarlo(SampleBank),
    /// One-dimensional reduction plus adaptive quadrature; needs `K + 1 <= 3`.
    Quadrature { tol: f64 },
}

impl Estimator {
    pub fn monte_carlo(market: &MarketConfig, samples: usize, seed: u64) -> Self {
        Estimator::MonteCarlo(SampleBank::draw(market, samples, &RngStream::new(seed), 0))
    }

    pub fn quadrature(tol: f64) -> Self {
        Estimator::Quadrature { tol }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Estimator::Quadrature { .. })
    }

    /// `G`, `U`, `V` of every bidder at `point`.
    pub fn evaluate(&self, market: &MarketConfig, family: Family, point: Point<'_>) -> Result<Vec<Evaluation>> {
        check_point(market, family, point)?;
        match self {
            Estimator::MonteCarlo(bank) => {
                if bank.k() != market.k() {
                    return Err(Error::Config("sample bank drawn for a different market".into()));
                }
                Ok(monte_carlo(bank, family, point))
            }
            Estimator::Quadrature { tol } => (0..market.k())
                .map(|k| quadrature(market, family, point, k, *tol))
                .collect(),
        }
    }

    /// As [`Estimator::evaluate`] for a single bidder (cheaper under quadrature).
    pub fn evaluate_bidder(&self, market: &MarketConfig, family: Family, point: Point<'_>, k: usize) -> Result<Evaluation> {
        match self {
            Estimator::Quadrature { tol } => {
                check_point(market, family, point)?;
                quadrature(market, family, point, k, *tol)
            }
            Estimator::MonteCarlo(_) => Ok(self.evaluate(market, family, point)?[k]),
        }
    }

    /// Expected expenditure vector only.
    pub fn expenditure(&self, market: &MarketConfig, family: Family, point: Point<'_>) -> Result<Vec<f64>> {
        Ok(self
            .evaluate(market, family, point)?
            .iter()
            .map(|e| e.expenditure.mean)
            .collect())
    }
}

fn check_point(market: &MarketConfig, family: Family, point: Point<'_>) -> Result<()> {
    let k = market.k();
    if point.lambda.len() != k {
        return Err(Error::Config(format!("{} multipliers for {k} bidders", point.lambda.len())));
    }
    if point.lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::Config("multipliers must be finite and nonnegative".into()));
    }
    if family == Family::Hp {
        let mu = point
            .mu
            .ok_or_else(|| Error::Config("hybrid maps need external multipliers".into()))?;
        if mu.len() != k || mu.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::Config("external multipliers must be K finite nonnegative numbers".into()));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Default)]
struct Moments {
    g: f64,
    g2: f64,
    v: f64,
    v2: f64,
    u2: f64,
}

impl Moments {
    fn add(&mut self, won: bool, value: f64, price: f64) {
        if won {
            self.g += price;
            self.g2 += price * price;
            self.v += value;
            self.v2 += value * value;
            let u = value - price;
            self.u2 += u * u;
        }
    }

    fn merge(&mut self, o: &Moments) {
        self.g += o.g;
        self.g2 += o.g2;
        self.v += o.v;
        self.v2 += o.v2;
        self.u2 += o.u2;
    }
}

fn std_error(sum: f64, sum_sq: f64, n: f64) -> f64 {
    if n < 2.0 {
        return 0.0;
    }
    let mean = sum / n;
    ((sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt()
}

/// Add one sample's contributions for every bidder.
fn accumulate(family: Family, point: Point<'_>, values: &[f64], d_out: f64, shaded: &mut [f64], acc: &mut [Moments]) {
    let k = values.len();
    let lambda = point.lambda;
    match family {
        Family::Ip | Family::Cp | Family::Hp => {
            for i in 0..k {
                shaded[i] = values[i] / (1.0 + lambda[i]);
            }
            let (mut first, mut second, mut arg) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for (i, &s) in shaded.iter().enumerate() {
                if s > first {
                    second = first;
                    first = s;
                    arg = i;
                } else if s > second {
                    second = s;
                }
            }
            for i in 0..k {
                let rival = if i == arg { second } else { first };
                let (won, price) = match family {
                    Family::Ip => {
                        let d = rival.max(d_out);
                        (shaded[i] >= d, d)
                    }
                    Family::Cp => (shaded[i] >= rival.max(d_out), d_out),
                    _ => {
                        let mu = point.mu.expect("checked")[i];
                        (shaded[i] >= rival.max(0.0) && values[i] / (1.0 + mu) >= d_out, d_out)
                    }
                };
                acc[i].add(won, values[i], price);
            }
        }
        Family::Selection => {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..k {
                let surplus = values[i] - (1.0 + lambda[i]) * d_out;
                if surplus > best {
                    best = surplus;
                    arg = i;
                }
            }
            if values[arg] >= (1.0 + lambda[arg]) * d_out {
                acc[arg].add(true, values[arg], d_out);
            }
        }
    }
}

fn monte_carlo(bank: &SampleBank, family: Family, point: Point<'_>) -> Vec<Evaluation> {
    let k = bank.k();
    let n = bank.len();
    let partials: Vec<Vec<Moments>> = bank
        .outside
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = vec![Moments::default(); k];
            let mut shaded = vec![0.0; k];
            for (j, &d) in chunk.iter().enumerate() {
                let row = c * CHUNK + j;
                accumulate(family, point, &bank.values[row * k..(row + 1) * k], d, &mut shaded, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![Moments::default(); k];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    let nf = n as f64;
    total
        .iter()
        .map(|m| {
            let g = m.g / nf;
            let v = m.v / nf;
            Evaluation {
                expenditure: Estimate {
                    mean: g,
                    std_error: std_error(m.g, m.g2, nf),
                },
                value: Estimate {
                    mean: v,
                    std_error: std_error(m.v, m.v2, nf),
                },
                utility: Estimate {
                    mean: v - g,
                    std_error: std_error(m.v - m.g, m.u2, nf),
                },
            }
        })
        .collect()
}

/// `P(max_i c_i X_i <= x)` for independent `X_i`, and the points where it kinks.
struct ProductCdf<'a> {
    terms: Vec<(&'a Distribution, f64)>,
}

impl<'a> ProductCdf<'a> {
    fn eval(&self, x: f64) -> f64 {
        self.terms.iter().map(|(d, scale)| d.cdf(scale * x)).product()
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.terms
            .iter()
            .flat_map(|(d, scale)| d.breakpoints().into_iter().map(move |b| b / scale))
            .filter(|b| *b >= 0.0)
            .collect()
    }

    /// `E[Y 1{Y <= s}] = s P(Y <= s) - int_0^s P(Y <= x) dx` for `Y >= 0` with this law.
    fn truncated_mean(&self, s: f64, breaks: &[f64], tol: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        s * self.eval(s) - integrate_pieces(|x| self.eval(x), 0.0, s, breaks, tol).0
    }
}

fn quadrature(market: &MarketConfig, family: Family, point: Point<'_>, k: usize, tol: f64) -> Result<Evaluation> {
    if market.k() + 1 > 3 {
        return Err(Error::Unsupported(format!(
            "quadrature handles at most two coalition members plus the outside bid, got K = {}",
            market.k()
        )));
    }
    if family == Family::Selection {
        return Err(Error::Unsupported("the selection map is estimated by Monte Carlo only".into()));
    }
    let lambda = point.lambda;
    let own = &market.bidders[k].value;
    let outside = &market.outside;
    let rivals: Vec<(&Distribution, f64)> = (0..market.k())
        .filter(|&i| i != k)
        .map(|i| (&market.bidders[i].value, 1.0 + lambda[i]))
        .collect();
    let own_scale = 1.0 + lambda[k];
    let inner_tol = tol * 0.1;

    let (g, v) = match family {
        Family::Ip => {
            let mut terms = rivals;
            terms.push((outside, 1.0));
            let law = ProductCdf { terms };
            let breaks = law.breakpoints();
            let outer: Vec<f64> = breaks.iter().map(|b| b * own_scale).collect();
            let g = own.expect_with(|v| law.truncated_mean(v / own_scale, &breaks, inner_tol), &outer, tol);
            let val = own.expect_with(|v| v * law.eval(v / own_scale), &outer, tol);
            (g, val)
        }
        Family::Cp | Family::Hp => {
            let internal = ProductCdf { terms: rivals };
            let out = ProductCdf {
                terms: vec![(outside, 1.0)],
            };
            let out_breaks = out.breakpoints();
            let ext_scale = match family {
                Family::Hp => 1.0 + point.mu.expect("checked")[k],
                _ => own_scale,
            };
            let mut outer: Vec<f64> = internal.breakpoints().iter().map(|b| b * own_scale).collect();
            outer.extend(out_breaks.iter().map(|b| b * ext_scale));
            let g = own.expect_with(
                |v| {
                    let m = internal.eval(v / own_scale);
                    if m == 0.0 {
                        0.0
                    } else {
                        m * out.truncated_mean(v / ext_scale, &out_breaks, inner_tol)
                    }
                },
                &outer,
                tol,
            );
            let val = own.expect_with(|v| v * internal.eval(v / own_scale) * out.eval(v / ext_scale), &outer, tol);
            (g, val)
        }
        Family::Selection => unreachable!(),
    };
    let e = |mean| Estimate { mean, std_error: tol };
    Ok(Evaluation {
        expenditure: e(g),
        value: e(v),
        utility: e(v - g),
    })
}

/// One scalar expectation request.
#[derive(Clone, Debug)]
pub struct ExpectationQuery {
    pub family: Family,
    pub quantity: Quantity,
    pub bidder: usize,
    pub lambda: Vec<f64>,
    pub mu: Option<Vec<f64>>,
}

impl ExpectationQuery {
    fn point(&self) -> Point<'_> {
        Point {
            lambda: &self.lambda,
            mu: self.mu.as_deref(),
        }
    }
}

/// How a standalone query is answered.
#[derive(Clone, Copy, Debug)]
pub enum Method {
    MonteCarlo { samples: usize, seed: u64 },
    Quadrature { tol: f64 },
}

pub fn estimate(market: &MarketConfig, query: &ExpectationQuery, method: Method) -> Result<Estimate> {
    let estimator = match method {
        Method::MonteCarlo { samples, seed } => Estimator::monte_carlo(market, samples, seed),
        Method::Quadrature { tol } => Estimator::quadrature(tol),
    };
    if query.bidder >= market.k() {
        return Err(Error::Config(format!("bidder {} out of range", query.bidder)));
    }
    Ok(estimator
        .evaluate_bidder(market, query.family, query.point(), query.bidder)?
        .get(query.quantity))
}

/// Answer several queries on one shared set of draws.
pub fn estimate_batch(market: &MarketConfig, queries: &[ExpectationQuery], samples: usize, seed: u64) -> Result<Vec<Estimate>> {
    let estimator = Estimator::monte_carlo(market, samples, seed);
    queries
        .iter()
        .map(|q| {
            if q.bidder >= market.k() {
                return Err(Error::Config(format!("bidder {} out of range", q.bidder)));
            }
            Ok(estimator.evaluate_bidder(market, q.family, q.point(), q.bidder)?.get(q.quantity))
        })
        .collect()
}
