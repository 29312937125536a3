//! Option-implied sentiment: model-free risk-neutral skewness of the log
//! return, computed from out-of-the-money option prices.
//!
//! Quadratic, cubic and quartic payoffs of `R = ln(S_T / F)` are spanned by
//! OTM puts below the forward and OTM calls above it. Their prices `V`, `W`,
//! `X` come from trapezoidal quadrature over the quoted strikes only, so sparse
//! or narrow chains understate the tails.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{OptionChainSnapshot, OptionType, SentimentSeries};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SkewError {
    #[error("no expiry within {min_days}..={max_days} days")]
    NoEligibleExpiry { min_days: i64, max_days: i64 },
    #[error("insufficient OTM quotes: best expiry has {calls} calls / {puts} puts, need {required} each")]
    InsufficientQuotes { calls: usize, puts: usize, required: usize },
    #[error("degenerate chain: non-positive variance contract ({variance})")]
    DegenerateChain { variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OsiConfig {
    pub target_horizon_days: i64,
    pub min_days: i64,
    pub max_days: i64,
    pub min_quotes_per_side: usize,
}

impl Default for OsiConfig {
    fn default() -> Self {
        OsiConfig {
            target_horizon_days: 30,
            min_days: 10,
            max_days: 91,
            min_quotes_per_side: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskNeutralMoments {
    pub date: NaiveDate,
    pub expiry: NaiveDate,
    pub tau_days: i64,
    /// Year fraction (calendar days / 365).
    pub tau: f64,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub n_calls: usize,
    pub n_puts: usize,
    pub strike_min: f64,
    pub strike_max: f64,
}

struct OtmCurve {
    /// (strike, OTM price) sorted by strike, puts first.
    points: Vec<(f64, f64)>,
    calls: usize,
    puts: usize,
}

/// Puts at or below the forward, calls strictly above it. A strike quoted
/// more than once keeps its first quote.
fn otm_curve(chain: &OptionChainSnapshot, expiry: NaiveDate, forward: f64) -> OtmCurve {
    let mut puts: BTreeMap<u64, f64> = BTreeMap::new();
    let mut calls: BTreeMap<u64, f64> = BTreeMap::new();
    for q in chain.quotes.iter().filter(|q| q.expiry == expiry) {
        let key = q.strike.to_bits();
        match q.kind {
            OptionType::Put if q.strike <= forward => {
                puts.entry(key).or_insert(q.mid);
            }
            OptionType::Call if q.strike > forward => {
                calls.entry(key).or_insert(q.mid);
            }
            _ => {}
        }
    }
    let mut points: Vec<(f64, f64)> = puts
        .iter()
        .chain(calls.iter())
        .map(|(k, p)| (f64::from_bits(*k), *p))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    OtmCurve {
        calls: calls.len(),
        puts: puts.len(),
        points,
    }
}

fn trapezoid(points: &[(f64, f64)], weight: impl Fn(f64) -> f64) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let (k0, p0) = w[0];
            let (k1, p1) = w[1];
            0.5 * (k1 - k0) * (weight(k0) * p0 + weight(k1) * p1)
        })
        .sum()
}

/// Model-free risk-neutral skewness at the expiry closest to the target horizon.
pub fn implied_skewness(chain: &OptionChainSnapshot, cfg: &OsiConfig) -> Result<RiskNeutralMoments, SkewError> {
    let mut expiries: Vec<NaiveDate> = chain.quotes.iter().map(|q| q.expiry).collect();
    expiries.sort();
    expiries.dedup();

    let eligible: Vec<(i64, NaiveDate)> = expiries
        .into_iter()
        .map(|e| ((e - chain.date).num_days(), e))
        .filter(|(d, _)| (cfg.min_days..=cfg.max_days).contains(d))
        .collect();
    if eligible.is_empty() {
        return Err(SkewError::NoEligibleExpiry {
            min_days: cfg.min_days,
            max_days: cfg.max_days,
        });
    }

    let mut best: Option<(i64, NaiveDate, f64, OtmCurve)> = None;
    let mut most = (0, 0);
    for (days, expiry) in eligible {
        let tau = days as f64 / 365.0;
        let forward = chain.underlying * (chain.rate * tau).exp();
        let curve = otm_curve(chain, expiry, forward);
        if curve.calls.min(curve.puts) > most.0.min(most.1) {
            most = (curve.calls, curve.puts);
        }
        if curve.calls < cfg.min_quotes_per_side || curve.puts < cfg.min_quotes_per_side {
            continue;
        }
        let dist = (days - cfg.target_horizon_days).abs();
        // ties go to the shorter expiry, which comes first
        if best
            .as_ref()
            .is_none_or(|(d, ..)| dist < (d - cfg.target_horizon_days).abs())
        {
            best = Some((days, expiry, tau, curve));
        }
    }
    let (days, expiry, tau, curve) = best.ok_or(SkewError::InsufficientQuotes {
        calls: most.0,
        puts: most.1,
        required: cfg.min_quotes_per_side,
    })?;

    let forward = chain.underlying * (chain.rate * tau).exp();
    let x = |k: f64| (k / forward).ln();
    // second derivatives of R^2, R^3, R^4 with respect to the strike
    let v = trapezoid(&curve.points, |k| 2.0 * (1.0 - x(k)) / (k * k));
    let w = trapezoid(&curve.points, |k| (6.0 * x(k) - 3.0 * x(k).powi(2)) / (k * k));
    let xq = trapezoid(&curve.points, |k| (12.0 * x(k).powi(2) - 4.0 * x(k).powi(3)) / (k * k));

    let growth = (chain.rate * tau).exp();
    let (m2, m3, m4) = (growth * v, growth * w, growth * xq);
    // E[S_T / F] - 1 vanishes because the expansion is centred on the forward.
    let mean = -(m2 / 2.0 + m3 / 6.0 + m4 / 24.0);
    let variance = m2 - mean * mean;
    if !(variance > 0.0) {
        return Err(SkewError::DegenerateChain { variance });
    }
    let skewness = (m3 - 3.0 * mean * m2 + 2.0 * mean.powi(3)) / variance.powf(1.5);

    Ok(RiskNeutralMoments {
        date: chain.date,
        expiry,
        tau_days: days,
        tau,
        mean,
        variance,
        skewness,
        n_calls: curve.calls,
        n_puts: curve.puts,
        strike_min: curve.points.first().map_or(0.0, |p| p.0),
        strike_max: curve.points.last().map_or(0.0, |p| p.0),
    })
}

#[derive(Debug, Clone, Default)]
pub struct OsiBuild {
    pub series: SentimentSeries,
    pub moments: Vec<RiskNeutralMoments>,
    pub skipped: Vec<(NaiveDate, SkewError)>,
}

/// Daily raw skewness for one stock; failing days are missing and logged.
pub fn osi_series(chains: &[OptionChainSnapshot], stock_id: &str, cfg: &OsiConfig) -> OsiBuild {
    let mut mine: Vec<&OptionChainSnapshot> = chains.iter().filter(|c| c.stock_id == stock_id).collect();
    mine.sort_by_key(|c| c.date);
    let results: Vec<(NaiveDate, Result<RiskNeutralMoments, SkewError>)> =
        mine.par_iter().map(|c| (c.date, implied_skewness(c, cfg))).collect();

    let mut out = OsiBuild {
        series: SentimentSeries::new("osi", stock_id),
        ..Default::default()
    };
    for (date, r) in results {
        match r {
            Ok(m) => {
                out.series.values.insert(date, Some(m.skewness));
                out.moments.push(m);
            }
            Err(e) => {
                out.series.values.insert(date, None);
                out.skipped.push((date, e));
            }
        }
    }
    out
}
