//! Aligns returns, sentiment indices and control factors on trading dates,
//! normalizes them, slices lagged feature rows and draws per-year splits.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::TradingCalendar;
use crate::seed;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PanelError {
    #[error("column `{0}` has no observations")]
    MissingColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` has zero variance over the fit dates")]
    ZeroVariance(String),
    #[error("no panel rows fall on the fit dates")]
    EmptyFitWindow,
    #[error("lag depth must be at least 1")]
    InvalidLag,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("correlation needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("correlation undefined for a constant series")]
    ConstantSeries,
    #[error("split ratio must be within (0, 1), got {0}")]
    InvalidRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// Carry the last observation forward for at most `max_gap` trading days.
    ForwardFill {
        max_gap: usize,
    },
    DropRow,
}

impl Default for FillPolicy {
    fn default() -> Self {
        FillPolicy::ForwardFill { max_gap: 3 }
    }
}

/// One named input column.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesInput {
    pub name: String,
    pub values: BTreeMap<NaiveDate, f64>,
    /// Targets should not be filled.
    pub fillable: bool,
}

impl SeriesInput {
    pub fn new(name: impl Into<String>, values: BTreeMap<NaiveDate, f64>) -> Self {
        SeriesInput {
            name: name.into(),
            values,
            fillable: true,
        }
    }

    pub fn unfilled(mut self) -> Self {
        self.fillable = false;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FillStats {
    pub filled: BTreeMap<String, usize>,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    /// Population standard deviation over the fit dates.
    pub std: f64,
}

impl ColumnStats {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn restore(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Aligned matrix of named columns on trading dates (rows).
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel {
    pub stock_id: String,
    pub dates: Vec<NaiveDate>,
    /// Position of each row's date in the source calendar.
    pub calendar_index: Vec<usize>,
    pub columns: Vec<String>,
    pub raw: Vec<Vec<f64>>,
    pub normalized: Option<Vec<Vec<f64>>>,
    pub stats: Option<Vec<ColumnStats>>,
}

/// Joins the inputs on calendar dates. A row is kept when every column is
/// observed or fillable under `policy`.
pub fn align_and_fill(
    stock_id: &str,
    inputs: &[SeriesInput],
    calendar: &TradingCalendar,
    policy: FillPolicy,
) -> Result<(FeaturePanel, FillStats), PanelError> {
    if let Some(empty) = inputs.iter().find(|s| s.values.is_empty()) {
        return Err(PanelError::MissingColumn(empty.name.clone()));
    }
    let mut panel = FeaturePanel {
        stock_id: stock_id.to_string(),
        dates: Vec::new(),
        calendar_index: Vec::new(),
        columns: inputs.iter().map(|s| s.name.clone()).collect(),
        raw: Vec::new(),
        normalized: None,
        stats: None,
    };
    let mut stats = FillStats {
        filled: inputs.iter().map(|s| (s.name.clone(), 0)).collect(),
        dropped_rows: 0,
    };
    // last observation per column: (calendar position, value)
    let mut last: Vec<Option<(usize, f64)>> = vec![None; inputs.len()];

    for (pos, date) in calendar.dates().iter().enumerate() {
        let mut row = Vec::with_capacity(inputs.len());
        let mut fills = Vec::new();
        let mut complete = true;
        // visit every column so later observations are recorded even on dropped rows
        for (j, s) in inputs.iter().enumerate() {
            if let Some(v) = s.values.get(date) {
                last[j] = Some((pos, *v));
                row.push(*v);
                continue;
            }
            let carried = match (policy, last[j]) {
                (FillPolicy::ForwardFill { max_gap }, Some((at, v))) if s.fillable && pos - at <= max_gap => Some(v),
                _ => None,
            };
            match carried {
                Some(v) => {
                    row.push(v);
                    fills.push(j);
                }
                None => complete = false,
            }
        }
        if !complete {
            stats.dropped_rows += 1;
            continue;
        }
        for j in fills {
            *stats.filled.get_mut(&inputs[j].name).unwrap() += 1;
        }
        panel.dates.push(*date);
        panel.calendar_index.push(pos);
        panel.raw.push(row);
    }
    Ok((panel, stats))
}

impl FeaturePanel {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, PanelError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| PanelError::UnknownColumn(name.to_string()))
    }

    pub fn raw_column(&self, name: &str) -> Result<Vec<f64>, PanelError> {
        let j = self.column_index(name)?;
        Ok(self.raw.iter().map(|r| r[j]).collect())
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeaturePanel, PanelError> {
        let idx: Vec<usize> = names.iter().map(|n| self.column_index(n)).collect::<Result<_, _>>()?;
        let pick =
            |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { m.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect() };
        Ok(FeaturePanel {
            stock_id: self.stock_id.clone(),
            dates: self.dates.clone(),
            calendar_index: self.calendar_index.clone(),
            columns: names.to_vec(),
            raw: pick(&self.raw),
            normalized: self.normalized.as_ref().map(pick),
            stats: self.stats.as_ref().map(|s| idx.iter().map(|&j| s[j]).collect()),
        })
    }

    /// Replaces one raw column (e.g. a refitted index); clears normalization.
    pub fn with_raw_column(&self, name: &str, values: &[f64]) -> Result<FeaturePanel, PanelError> {
        let j = self.column_index(name)?;
        if values.len() != self.len() {
            return Err(PanelError::TooFewRows {
                needed: self.len(),
                got: values.len(),
            });
        }
        let mut out = self.clone();
        for (row, v) in out.raw.iter_mut().zip(values) {
            row[j] = *v;
        }
        out.normalized = None;
        out.stats = None;
        Ok(out)
    }

    /// Normalized values when present, raw otherwise.
    pub fn values(&self) -> &[Vec<f64>] {
        self.normalized.as_deref().unwrap_or(&self.raw)
    }
}

/// Standardizes every column with mean and population std taken over the
/// rows dated in `fit_dates`, applied to all rows.
pub fn normalize(panel: &FeaturePanel, fit_dates: &BTreeSet<NaiveDate>) -> Result<FeaturePanel, PanelError> {
    let fit_rows: Vec<&Vec<f64>> = panel
        .dates
        .iter()
        .zip(&panel.raw)
        .filter(|(d, _)| fit_dates.contains(d))
        .map(|(_, r)| r)
        .collect();
    if fit_rows.is_empty() {
        return Err(PanelError::EmptyFitWindow);
    }
    let n = fit_rows.len() as f64;
    let mut stats = Vec::with_capacity(panel.width());
    for (j, name) in panel.columns.iter().enumerate() {
        let mean = fit_rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = fit_rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1e-300)) {
            return Err(PanelError::ZeroVariance(name.clone()));
        }
        stats.push(ColumnStats { mean, std });
    }
    let normalized = panel
        .raw
        .iter()
        .map(|r| r.iter().zip(&stats).map(|(x, s)| s.apply(*x)).collect())
        .collect();
    Ok(FeaturePanel {
        normalized: Some(normalized),
        stats: Some(stats),
        ..panel.clone()
    })
}

/// Model input for one target date.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedRow {
    pub date: NaiveDate,
    /// `[Y_{t-1}; Y_{t-2}; ...; Y_{t-lag}]`, lag-1 block first.
    pub inputs: Vec<f64>,
    /// Full `Y_t`, the regressand of every VAR equation.
    pub current: Vec<f64>,
    pub target: f64,
    /// Target before normalization.
    pub target_raw: f64,
}

impl LaggedRow {
    /// Input blocks ordered oldest first, for recurrent models.
    pub fn sequence(&self, width: usize) -> Vec<&[f64]> {
        let mut blocks: Vec<&[f64]> = self.inputs.chunks(width).collect();
        blocks.reverse();
        blocks
    }
}

/// Slices lagged rows. A date qualifies only when its `lag` predecessors are
/// the immediately preceding calendar trading days.
pub fn build_lagged_rows(panel: &FeaturePanel, lag: usize, target: &str) -> Result<Vec<LaggedRow>, PanelError> {
    if lag == 0 {
        return Err(PanelError::InvalidLag);
    }
    if panel.len() < lag + 1 {
        return Err(PanelError::TooFewRows {
            needed: lag + 1,
            got: panel.len(),
        });
    }
    let tj = panel.column_index(target)?;
    let values = panel.values();
    let mut rows = Vec::with_capacity(panel.len() - lag);
    for t in lag..panel.len() {
        let contiguous = (1..=lag).all(|s| panel.calendar_index[t - s] + s == panel.calendar_index[t]);
        if !contiguous {
            continue;
        }
        let mut inputs = Vec::with_capacity(lag * panel.width());
        for s in 1..=lag {
            inputs.extend_from_slice(&values[t - s]);
        }
        rows.push(LaggedRow {
            date: panel.dates[t],
            inputs,
            current: values[t].clone(),
            target: values[t][tj],
            target_raw: panel.raw[t][tj],
        });
    }
    Ok(rows)
}

/// Train/test partition of the dates of one period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DateSplit {
    /// Calendar year, `None` for a multi-year period.
    pub year: Option<i32>,
    pub train: Vec<NaiveDate>,
    pub test: Vec<NaiveDate>,
    pub seed: u64,
}

impl DateSplit {
    pub fn whole(&self) -> Vec<NaiveDate> {
        let mut all: Vec<NaiveDate> = self.train.iter().chain(&self.test).copied().collect();
        all.sort();
        all
    }

    pub fn train_set(&self) -> BTreeSet<NaiveDate> {
        self.train.iter().copied().collect()
    }

    /// Union of several splits as one multi-year period.
    pub fn merge(splits: &[DateSplit], seed: u64) -> DateSplit {
        let mut train: Vec<NaiveDate> = splits.iter().flat_map(|s| s.train.iter().copied()).collect();
        let mut test: Vec<NaiveDate> = splits.iter().flat_map(|s| s.test.iter().copied()).collect();
        train.sort();
        test.sort();
        DateSplit {
            year: None,
            train,
            test,
            seed,
        }
    }
}

/// Uniformly random per-year partition with `round(ratio * n)` training dates.
pub fn yearly_split(dates: &[NaiveDate], ratio: f64, seed: u64) -> Result<Vec<DateSplit>, PanelError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PanelError::InvalidRatio(ratio));
    }
    let mut by_year: BTreeMap<i32, Vec<NaiveDate>> = BTreeMap::new();
    for d in dates {
        by_year.entry(d.year()).or_default().push(*d);
    }
    Ok(by_year
        .into_iter()
        .map(|(year, mut days)| {
            days.sort();
            days.dedup();
            let year_seed = seed::derive(seed, &format!("split/{year}"));
            let mut rng = ChaCha8Rng::seed_from_u64(year_seed);
            days.shuffle(&mut rng);
            let n_train = (ratio * days.len() as f64).round() as usize;
            let mut train = days[..n_train].to_vec();
            let mut test = days[n_train..].to_vec();
            train.sort();
            test.sort();
            DateSplit {
                year: Some(year),
                train,
                test,
                seed: year_seed,
            }
        })
        .collect())
}

/// Pearson correlation of paired observations.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64, PanelError> {
    let n = x.len().min(y.len());
    if n < 2 {
        return Err(PanelError::TooFewPairs(n));
    }
    let (x, y) = (&x[..n], &y[..n]);
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PanelError::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation over dates present in both series.
pub fn paired_correlation(x: &BTreeMap<NaiveDate, f64>, y: &BTreeMap<NaiveDate, f64>) -> Result<f64, PanelError> {
    let (a, b): (Vec<f64>, Vec<f64>) = x.iter().filter_map(|(d, v)| y.get(d).map(|w| (*v, *w))).unzip();
    correlation(&a, &b)
}

/// Correlation of `x_t` with `y` on the next trading date after `t`.
pub fn lead_correlation(
    x: &BTreeMap<NaiveDate, f64>,
    y: &BTreeMap<NaiveDate, f64>,
    calendar: &TradingCalendar,
) -> Result<f64, PanelError> {
    let (a, b): (Vec<f64>, Vec<f64>) = x
        .iter()
        .filter_map(|(d, v)| {
            let next = calendar.next_after(*d)?;
            y.get(&next).map(|w| (*v, *w))
        })
        .unzip();
    correlation(&a, &b)
}
