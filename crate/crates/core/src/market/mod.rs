//! Core market-data types: posts, prices, option chains and factor series.

mod calendar;
pub mod ingest;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calendar::{MarketClock, TradingCalendar};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DataError {
    #[error("calendar is empty")]
    EmptyCalendar,
    #[error("calendar dates must be strictly increasing (offending date {0})")]
    UnorderedCalendar(NaiveDate),
    #[error("no trading day on or after {0} in calendar")]
    OutOfRange(NaiveDate),
    #[error("{0} is not a trading date")]
    NotTradingDate(NaiveDate),
    #[error("missing price for {stock} on {date}")]
    MissingPrice { stock: String, date: NaiveDate },
    #[error("non-positive price {price} for {stock} on {date}")]
    NonPositivePrice { stock: String, date: NaiveDate, price: f64 },
    #[error("invalid {what}: {value:?}")]
    Invalid { what: &'static str, value: String },
}

/// Three-way post polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neu")]
    Neutral,
    #[serde(rename = "neg")]
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn token(self) -> &'static str {
        match self {
            Polarity::Positive => "pos",
            Polarity::Neutral => "neu",
            Polarity::Negative => "neg",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Neutral => 1,
            Polarity::Negative => 2,
        }
    }

    /// Positive and negative swap; neutral is fixed.
    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Neutral => Polarity::Neutral,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Polarity {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pos" | "positive" => Ok(Polarity::Positive),
            "neu" | "neutral" => Ok(Polarity::Neutral),
            "neg" | "negative" => Ok(Polarity::Negative),
            other => Err(DataError::Invalid {
                what: "polarity",
                value: other.to_string(),
            }),
        }
    }
}

/// One social-media post about a stock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPost {
    pub post_id: String,
    pub stock_id: String,
    pub timestamp: DateTime<FixedOffset>,
    /// Expert votes, possibly empty.
    pub votes: Vec<Polarity>,
    /// Consolidated or classifier label.
    pub label: Option<Polarity>,
    /// Flagged by the spam ("water army") detector.
    pub spam: bool,
}

/// Daily close prices for one stock.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceSeries {
    pub stock_id: String,
    pub closes: BTreeMap<NaiveDate, f64>,
}

impl PriceSeries {
    pub fn new(stock_id: impl Into<String>) -> Self {
        PriceSeries {
            stock_id: stock_id.into(),
            closes: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, date: NaiveDate, close: f64) -> Result<(), DataError> {
        if !(close > 0.0) || !close.is_finite() {
            return Err(DataError::NonPositivePrice {
                stock: self.stock_id.clone(),
                date,
                price: close,
            });
        }
        self.closes.insert(date, close);
        Ok(())
    }

    fn close(&self, date: NaiveDate) -> Result<f64, DataError> {
        self.closes.get(&date).copied().ok_or_else(|| DataError::MissingPrice {
            stock: self.stock_id.clone(),
            date,
        })
    }

    /// Log return `ln(S_t / S_{t-1})` where `t-1` is the previous trading date.
    pub fn log_return(&self, calendar: &TradingCalendar, date: NaiveDate) -> Result<f64, DataError> {
        let prev = calendar.previous(date)?.ok_or(DataError::MissingPrice {
            stock: self.stock_id.clone(),
            date,
        })?;
        let now = self.close(date)?;
        let before = self.close(prev)?;
        Ok((now / before).ln())
    }

    /// Every computable log return on the calendar; dates lacking either close are skipped.
    pub fn log_returns(&self, calendar: &TradingCalendar) -> BTreeMap<NaiveDate, f64> {
        calendar
            .dates()
            .windows(2)
            .filter_map(|w| {
                let (a, b) = (self.closes.get(&w[0])?, self.closes.get(&w[1])?);
                Some((w[1], (b / a).ln()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptionType {
    Call,
    Put,
}

impl OptionType {
    pub fn code(self) -> &'static str {
        match self {
            OptionType::Call => "C",
            OptionType::Put => "P",
        }
    }
}

impl FromStr for OptionType {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "C" | "c" => Ok(OptionType::Call),
            "P" | "p" => Ok(OptionType::Put),
            other => Err(DataError::Invalid {
                what: "option type",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub strike: f64,
    pub expiry: NaiveDate,
    pub kind: OptionType,
    pub mid: f64,
}

/// All option quotes for one stock observed on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionChainSnapshot {
    pub stock_id: String,
    pub date: NaiveDate,
    pub underlying: f64,
    /// Annualized, continuously compounded.
    pub rate: f64,
    pub quotes: Vec<OptionQuote>,
}

/// A named raw factor observed on trading dates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FactorSeries {
    pub name: String,
    pub values: BTreeMap<NaiveDate, f64>,
}

/// A daily index on trading dates; `None` marks a day without a usable value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SentimentSeries {
    pub name: String,
    pub stock_id: String,
    pub values: BTreeMap<NaiveDate, Option<f64>>,
}

impl SentimentSeries {
    pub fn new(name: impl Into<String>, stock_id: impl Into<String>) -> Self {
        SentimentSeries {
            name: name.into(),
            stock_id: stock_id.into(),
            values: BTreeMap::new(),
        }
    }

    /// Present (non-missing) observations only.
    pub fn observed(&self) -> BTreeMap<NaiveDate, f64> {
        self.values.iter().filter_map(|(d, v)| v.map(|v| (*d, v))).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn cal(days: &[&str]) -> TradingCalendar {
        TradingCalendar::new(days.iter().map(|s| d(s)).collect()).unwrap()
    }

    #[test]
    fn log_return_identity_and_substitution() {
        let c = cal(&["2016-01-04", "2016-01-05", "2016-01-06"]);
        let mut p = PriceSeries::new("X");
        p.insert(d("2016-01-04"), 100.0).unwrap();
        p.insert(d("2016-01-05"), 100.0).unwrap();
        p.insert(d("2016-01-06"), 110.0).unwrap();
        assert_eq!(p.log_return(&c, d("2016-01-05")).unwrap(), 0.0);
        let r = p.log_return(&c, d("2016-01-06")).unwrap();
        assert!((r - 0.0953102).abs() < 1e-7);
    }

    #[test]
    fn log_return_missing_data() {
        let c = cal(&["2016-01-04", "2016-01-05", "2016-01-06"]);
        let mut p = PriceSeries::new("X");
        p.insert(d("2016-01-04"), 100.0).unwrap();
        p.insert(d("2016-01-06"), 110.0).unwrap();
        assert!(matches!(
            p.log_return(&c, d("2016-01-06")),
            Err(DataError::MissingPrice { .. })
        ));
        // first calendar day has no predecessor
        assert!(p.log_return(&c, d("2016-01-04")).is_err());
        assert!(p.insert(d("2016-01-05"), 0.0).is_err());
    }

    #[test]
    fn five_prices_give_four_returns() {
        let days = ["2016-01-04", "2016-01-05", "2016-01-06", "2016-01-07", "2016-01-08"];
        let c = cal(&days);
        let closes = [50.0, 52.5, 51.0, 49.75, 55.0];
        let mut p = PriceSeries::new("X");
        for (day, px) in days.iter().zip(closes) {
            p.insert(d(day), px).unwrap();
        }
        let got = p.log_returns(&c);
        assert_eq!(got.len(), 4);
        for i in 1..5 {
            let want = closes[i].ln() - closes[i - 1].ln();
            assert!((got[&d(days[i])] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn polarity_tokens() {
        for p in Polarity::ALL {
            assert_eq!(p.token().parse::<Polarity>().unwrap(), p);
            assert_eq!(p.flipped().flipped(), p);
        }
        assert!("abstain".parse::<Polarity>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn constant_prices_have_zero_returns(px in 0.01f64..1e6, n in 2usize..40) {
            let start = d("2016-01-04");
            let days: Vec<_> = (0..n as i64).map(|i| start + chrono::Duration::days(i)).collect();
            let c = TradingCalendar::new(days.clone()).unwrap();
            let mut p = PriceSeries::new("X");
            for day in &days {
                p.insert(*day, px).unwrap();
            }
            for r in p.log_returns(&c).values() {
                proptest::prop_assert_eq!(*r, 0.0);
            }
        }
    }
}
