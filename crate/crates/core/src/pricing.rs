//! Closed-form European option pricing with a parametric volatility smile.
//! Used to synthesize option chains with known skew.

use chrono::{Duration, NaiveDate};
use statrs::function::erf::erfc;

use crate::market::{OptionChainSnapshot, OptionQuote, OptionType};

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Black–Scholes price of a European option without dividends.
pub fn black_scholes(kind: OptionType, spot: f64, strike: f64, rate: f64, tau: f64, vol: f64) -> f64 {
    let disc = (-rate * tau).exp();
    let sd = vol * tau.sqrt();
    if sd <= 0.0 {
        let fwd = spot / disc;
        return disc
            * match kind {
                OptionType::Call => (fwd - strike).max(0.0),
                OptionType::Put => (strike - fwd).max(0.0),
            };
    }
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * tau) / sd;
    let d2 = d1 - sd;
    match kind {
        OptionType::Call => spot * norm_cdf(d1) - strike * disc * norm_cdf(d2),
        OptionType::Put => strike * disc * norm_cdf(-d2) - spot * norm_cdf(-d1),
    }
}

/// Implied volatility as a quadratic in standardized log-moneyness
/// `m = ln(K/F) / (base_vol * sqrt(tau))`. A negative slope makes puts dearer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smile {
    pub base_vol: f64,
    pub slope: f64,
    pub curvature: f64,
}

impl Smile {
    pub fn flat(vol: f64) -> Self {
        Smile {
            base_vol: vol,
            slope: 0.0,
            curvature: 0.0,
        }
    }

    pub fn vol(&self, strike: f64, forward: f64, tau: f64) -> f64 {
        let m = (strike / forward).ln() / (self.base_vol * tau.sqrt());
        (self.base_vol * (1.0 + self.slope * m + self.curvature * m * m)).max(0.2 * self.base_vol)
    }
}

/// Strikes evenly spaced in price over `spot * exp(±width * base_vol * sqrt(tau))`.
pub fn strike_grid(spot: f64, base_vol: f64, tau: f64, width: f64, count: usize) -> Vec<f64> {
    let sd = base_vol * tau.sqrt();
    let (lo, hi) = (spot * (-width * sd).exp(), spot * (width * sd).exp());
    if count < 2 {
        return vec![spot];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Prices a call and a put at every strike for a single expiry.
pub fn price_chain(
    stock_id: &str,
    date: NaiveDate,
    spot: f64,
    rate: f64,
    days_to_expiry: i64,
    strikes: &[f64],
    smile: Smile,
) -> OptionChainSnapshot {
    let tau = days_to_expiry as f64 / 365.0;
    let expiry = date + Duration::days(days_to_expiry);
    let fwd = spot * (rate * tau).exp();
    let mut quotes = Vec::with_capacity(2 * strikes.len());
    for &k in strikes {
        let vol = smile.vol(k, fwd, tau);
        for kind in [OptionType::Call, OptionType::Put] {
            quotes.push(OptionQuote {
                strike: k,
                expiry,
                kind,
                mid: black_scholes(kind, spot, k, rate, tau, vol),
            });
        }
    }
    OptionChainSnapshot {
        stock_id: stock_id.to_string(),
        date,
        underlying: spot,
        rate,
        quotes,
    }
}
