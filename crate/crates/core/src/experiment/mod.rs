//! The forecasting grid: stocks × periods × predictor sets × models, each
//! cell fit on its training dates and scored on train, test and whole sets.

mod report;

pub use report::{
    best_predictor_markup, export_figure_data, figure_csv, render_table, reports_csv, DateSet, MarkupKey,
};

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forecast::{fit_lstm, fit_var, Fitted, LstmConfig, ModelKind};
use crate::market::FactorSeries;
use crate::panel::{build_lagged_rows, normalize, yearly_split, DateSplit, FeaturePanel, LaggedRow};
use crate::pca::{fit_pca_on, msi_series, Anchor};
use crate::seed;

/// Sentiment columns entering the model next to the return and controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PredictorSet {
    Mixture,
    #[serde(rename = "OSI")]
    Osi,
    #[serde(rename = "MSI")]
    Msi,
    #[serde(rename = "BSI")]
    Bsi,
    #[serde(rename = "NoSI")]
    NoSi,
}

impl PredictorSet {
    pub const ALL: [PredictorSet; 5] = [
        PredictorSet::Mixture,
        PredictorSet::Osi,
        PredictorSet::Msi,
        PredictorSet::Bsi,
        PredictorSet::NoSi,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PredictorSet::Mixture => "Mixture",
            PredictorSet::Osi => "OSI",
            PredictorSet::Msi => "MSI",
            PredictorSet::Bsi => "BSI",
            PredictorSet::NoSi => "NoSI",
        }
    }

    pub fn indices(&self) -> &'static [&'static str] {
        match self {
            PredictorSet::Mixture => &["bsi", "osi", "msi"],
            PredictorSet::Osi => &["osi"],
            PredictorSet::Msi => &["msi"],
            PredictorSet::Bsi => &["bsi"],
            PredictorSet::NoSi => &[],
        }
    }

    /// Panel columns: return first, then indices, then controls.
    pub fn columns(&self, controls: &[String]) -> Vec<String> {
        let mut cols = vec!["r".to_string()];
        cols.extend(self.indices().iter().map(|s| s.to_string()));
        cols.extend(controls.iter().cloned());
        cols
    }
}

impl std::fmt::Display for PredictorSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PredictorSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        PredictorSet::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown predictor set `{s}`"))
    }
}

/// A calendar year or the whole sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Period {
    Year(i32),
    Full,
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Period::Year(y) => write!(f, "{y}"),
            Period::Full => f.write_str("full"),
        }
    }
}

/// Space in which the zero baseline predicts 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroSpace {
    Raw,
    Normalized,
}

/// Factor inputs for refitting MSI on a cell's training dates.
#[derive(Debug, Clone, PartialEq)]
pub struct MsiInputs {
    pub factors: BTreeMap<String, FactorSeries>,
    pub names: Vec<String>,
    pub anchor: Anchor,
}

/// Aligned raw panel for one stock, with column `r` and any of
/// `bsi`, `osi`, `msi` plus controls.
#[derive(Debug, Clone, PartialEq)]
pub struct StockPanel {
    pub stock_id: String,
    pub panel: FeaturePanel,
    pub controls: Vec<String>,
    pub msi: Option<MsiInputs>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub seed: u64,
    pub lag: usize,
    pub split_ratio: f64,
    /// `None` runs every year plus the full period.
    pub years: Option<Vec<i32>>,
    pub include_full: bool,
    pub sets: Vec<PredictorSet>,
    pub models: Vec<ModelKind>,
    pub lstm: LstmConfig,
    pub whole_sample: bool,
    pub zero_space: ZeroSpace,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            seed: 0,
            lag: 2,
            split_ratio: 0.8,
            years: None,
            include_full: true,
            sets: PredictorSet::ALL.to_vec(),
            models: ModelKind::ALL.to_vec(),
            lstm: LstmConfig::default(),
            whole_sample: false,
            zero_space: ZeroSpace::Raw,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub date: NaiveDate,
    pub real: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CellKey {
    pub stock: String,
    pub period: Period,
    pub set: PredictorSet,
    pub model: ModelKind,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}/{}", self.stock, self.period, self.set, self.model)
    }
}

/// Scale applied to raw-return MSEs in reports.
pub const MSE_UNIT: f64 = 1e5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastReport {
    pub key: CellKey,
    /// Raw-return MSE ×1e5.
    pub mse_train: f64,
    pub mse_test: f64,
    pub mse_whole: f64,
    /// MSE of the normalized target.
    pub nmse_train: f64,
    pub nmse_test: f64,
    pub nmse_whole: f64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(skip)]
    pub train: Vec<SeriesPoint>,
    #[serde(skip)]
    pub test: Vec<SeriesPoint>,
}

impl ForecastReport {
    /// Train and test points merged in date order.
    pub fn whole(&self) -> Vec<SeriesPoint> {
        let mut all: Vec<SeriesPoint> = self.train.iter().chain(&self.test).copied().collect();
        all.sort_by_key(|p| p.date);
        all
    }

    pub fn mse(&self, set: DateSet) -> f64 {
        match set {
            DateSet::Train => self.mse_train,
            DateSet::Test => self.mse_test,
            DateSet::Whole => self.mse_whole,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub key: CellKey,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GridResult {
    pub reports: Vec<ForecastReport>,
    pub failures: Vec<CellFailure>,
    pub splits: BTreeMap<String, Vec<DateSplit>>,
}

/// Per-year splits over the dates that have complete lagged rows.
pub fn stock_splits(stock: &StockPanel, lag: usize, ratio: f64, seed: u64) -> Result<Vec<DateSplit>, String> {
    let rows = build_lagged_rows(&stock.panel, lag, "r").map_err(|e| e.to_string())?;
    let dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    yearly_split(&dates, ratio, seed::derive(seed, &format!("split/{}", stock.stock_id))).map_err(|e| e.to_string())
}

fn mean_sq(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|(p, a)| (p - a).powi(2)).sum::<f64>() / points.len() as f64
}

fn run_cell(stock: &StockPanel, split: &DateSplit, key: &CellKey, spec: &GridSpec) -> Result<ForecastReport, String> {
    let train: BTreeSet<NaiveDate> = split.train_set();
    let test: BTreeSet<NaiveDate> = split.test.iter().copied().collect();
    let mut panel = stock.panel.clone();

    if key.set.indices().contains(&"msi") && !spec.whole_sample {
        let msi = stock.msi.as_ref().ok_or("no MSI factor inputs")?;
        let model = fit_pca_on(&msi.factors, &msi.names, train.iter().copied(), &msi.anchor)
            .map_err(|e| format!("MSI refit: {e}"))?;
        let scored = msi_series(&model, &msi.factors, panel.dates.iter().copied(), &stock.stock_id)
            .map_err(|e| e.to_string())?;
        let values: Vec<f64> = panel
            .dates
            .iter()
            .map(|d| scored.values[d].ok_or_else(|| format!("MSI missing on {d}")))
            .collect::<Result<_, _>>()?;
        panel = panel.with_raw_column("msi", &values).map_err(|e| e.to_string())?;
    }

    let panel = panel
        .select(&key.set.columns(&stock.controls))
        .map_err(|e| e.to_string())?;
    let fit_dates: BTreeSet<NaiveDate> = if spec.whole_sample {
        panel.dates.iter().copied().collect()
    } else {
        train.clone()
    };
    let panel = normalize(&panel, &fit_dates).map_err(|e| e.to_string())?;
    let r_stats = panel.stats.as_ref().expect("normalized")[0];
    let rows = build_lagged_rows(&panel, spec.lag, "r").map_err(|e| e.to_string())?;
    let train_rows: Vec<&LaggedRow> = rows.iter().filter(|r| train.contains(&r.date)).collect();
    let test_rows: Vec<&LaggedRow> = rows.iter().filter(|r| test.contains(&r.date)).collect();
    if train_rows.len() != split.train.len() || test_rows.len() != split.test.len() {
        return Err("split dates without lagged rows".into());
    }

    let owned: Vec<LaggedRow> = train_rows.iter().map(|r| (*r).clone()).collect();
    let fitted = match key.model {
        ModelKind::Var => Fitted::Var(fit_var(&owned, &panel.columns, spec.lag, 0).map_err(|e| e.to_string())?),
        ModelKind::Lstm => {
            let cfg = LstmConfig {
                lag: spec.lag,
                seed: seed::derive(spec.seed, &format!("lstm/{key}")),
                ..spec.lstm.clone()
            };
            Fitted::Lstm(fit_lstm(&owned, &panel.columns, &cfg).map_err(|e| e.to_string())?)
        }
        ModelKind::Zero => Fitted::Zero,
    };

    // predictions in normalized space, then mapped back to raw returns
    let predict = |rows: &[&LaggedRow]| -> Result<(Vec<SeriesPoint>, Vec<(f64, f64)>), String> {
        let mut points = Vec::with_capacity(rows.len());
        let mut norm = Vec::with_capacity(rows.len());
        for r in rows {
            let (z, raw) = match (&fitted, spec.zero_space) {
                (Fitted::Zero, ZeroSpace::Raw) => (r_stats.apply(0.0), 0.0),
                _ => {
                    let z = fitted.predict_row(r).map_err(|e| e.to_string())?;
                    (z, r_stats.restore(z))
                }
            };
            points.push(SeriesPoint {
                date: r.date,
                real: r.target_raw,
                predicted: raw,
            });
            norm.push((z, r.target));
        }
        Ok((points, norm))
    };
    let (train_pts, train_norm) = predict(&train_rows)?;
    let (test_pts, test_norm) = predict(&test_rows)?;
    let raw = |pts: &[SeriesPoint]| -> Vec<(f64, f64)> { pts.iter().map(|p| (p.predicted, p.real)).collect() };
    let mut whole_pts: Vec<SeriesPoint> = train_pts.iter().chain(&test_pts).copied().collect();
    whole_pts.sort_by_key(|p| p.date);
    let whole_norm: Vec<(f64, f64)> = train_norm.iter().chain(&test_norm).copied().collect();

    Ok(ForecastReport {
        key: key.clone(),
        mse_train: MSE_UNIT * mean_sq(&raw(&train_pts)),
        mse_test: MSE_UNIT * mean_sq(&raw(&test_pts)),
        mse_whole: MSE_UNIT * mean_sq(&raw(&whole_pts)),
        nmse_train: mean_sq(&train_norm),
        nmse_test: mean_sq(&test_norm),
        nmse_whole: mean_sq(&whole_norm),
        n_train: train_pts.len(),
        n_test: test_pts.len(),
        train: train_pts,
        test: test_pts,
    })
}

/// Runs every requested cell. Failures are recorded per cell; results come
/// back sorted by cell key regardless of scheduling.
pub fn run_grid(stocks: &[StockPanel], spec: &GridSpec) -> GridResult {
    let mut result = GridResult::default();
    let mut jobs: Vec<(usize, DateSplit, CellKey)> = Vec::new();
    for (si, stock) in stocks.iter().enumerate() {
        let splits = match stock_splits(stock, spec.lag, spec.split_ratio, spec.seed) {
            Ok(s) => s,
            Err(e) => {
                for &set in &spec.sets {
                    for &model in &spec.models {
                        result.failures.push(CellFailure {
                            key: CellKey {
                                stock: stock.stock_id.clone(),
                                period: Period::Full,
                                set,
                                model,
                            },
                            error: format!("split: {e}"),
                        });
                    }
                }
                continue;
            }
        };
        let mut periods: Vec<(Period, DateSplit)> = splits
            .iter()
            .filter(|s| spec.years.as_ref().is_none_or(|ys| ys.contains(&s.year.unwrap())))
            .map(|s| (Period::Year(s.year.unwrap()), s.clone()))
            .collect();
        if spec.include_full {
            periods.push((Period::Full, DateSplit::merge(&splits, spec.seed)));
        }
        for (period, split) in periods {
            for &set in &spec.sets {
                for &model in &spec.models {
                    let key = CellKey {
                        stock: stock.stock_id.clone(),
                        period,
                        set,
                        model,
                    };
                    jobs.push((si, split.clone(), key));
                }
            }
        }
        result.splits.insert(stock.stock_id.clone(), splits);
    }

    let work = || -> Vec<Result<ForecastReport, CellFailure>> {
        jobs.par_iter()
            .map(|(si, split, key)| {
                run_cell(&stocks[*si], split, key, spec).map_err(|error| CellFailure {
                    key: key.clone(),
                    error,
                })
            })
            .collect()
    };
    let outcomes = if spec.jobs > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(spec.jobs).build() {
            Ok(pool) => pool.install(work),
            Err(_) => work(),
        }
    } else {
        work()
    };
    for o in outcomes {
        match o {
            Ok(r) => result.reports.push(r),
            Err(f) => result.failures.push(f),
        }
    }
    result.reports.sort_by(|a, b| a.key.cmp(&b.key));
    result.failures.sort_by(|a, b| a.key.cmp(&b.key));
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::TradingCalendar;
    use crate::panel::{align_and_fill, FillPolicy, SeriesInput};
    use chrono::Duration;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Stock with `r_t = 0.01 * x_{t-1} + noise` and one control.
    fn toy_stock(days: usize, seed: u64) -> StockPanel {
        let start: NaiveDate = "2016-01-01".parse().unwrap();
        let dates: Vec<NaiveDate> = (0..days as i64).map(|i| start + Duration::days(i)).collect();
        let cal = TradingCalendar::new(dates.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..days).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..days).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..days)
            .map(|t| {
                if t == 0 {
                    0.0
                } else {
                    0.01 * x[t - 1] + 0.001 * rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let series =
            |name: &str, v: &[f64]| SeriesInput::new(name, dates.iter().copied().zip(v.iter().copied()).collect());
        let inputs = vec![
            series("r", &r).unfilled(),
            series("bsi", &x),
            series("osi", &c.iter().map(|v| v * 0.5).collect::<Vec<_>>()),
            series("c1", &c),
        ];
        let (panel, _) = align_and_fill("T", &inputs, &cal, FillPolicy::default()).unwrap();
        StockPanel {
            stock_id: "T".into(),
            panel,
            controls: vec!["c1".into()],
            msi: None,
        }
    }

    fn spec() -> GridSpec {
        GridSpec {
            seed: 3,
            sets: vec![PredictorSet::Bsi, PredictorSet::NoSi],
            models: vec![ModelKind::Var, ModelKind::Zero],
            ..Default::default()
        }
    }

    #[test]
    fn counting_one_year() {
        let stock = toy_stock(200, 1);
        let g = run_grid(
            &[stock],
            &GridSpec {
                include_full: false,
                ..spec()
            },
        );
        assert!(g.failures.is_empty(), "{:?}", g.failures);
        assert_eq!(g.reports.len(), 4);
        for r in &g.reports {
            assert_eq!(r.n_train + r.n_test, 198);
            assert_eq!(r.n_train, (0.8f64 * 198.0).round() as usize);
        }
    }

    #[test]
    fn zero_model_is_mean_square_and_var_learns() {
        let stock = toy_stock(400, 2);
        let g = run_grid(&[stock], &spec());
        let zero = g
            .reports
            .iter()
            .find(|r| r.key.model == ModelKind::Zero && r.key.period == Period::Full)
            .unwrap();
        let whole = zero.whole();
        let ms = whole.iter().map(|p| p.real * p.real).sum::<f64>() / whole.len() as f64;
        assert!((zero.mse_whole - MSE_UNIT * ms).abs() < 1e-9);
        let var_bsi = g
            .reports
            .iter()
            .find(|r| r.key.model == ModelKind::Var && r.key.set == PredictorSet::Bsi && r.key.period == Period::Full)
            .unwrap();
        assert!(var_bsi.mse_test < 0.1 * zero.mse_test);
    }

    #[test]
    fn whole_mse_decomposes() {
        let g = run_grid(&[toy_stock(400, 4)], &spec());
        for r in &g.reports {
            let n = (r.n_train + r.n_test) as f64;
            let lhs = n * r.mse_whole;
            let rhs = r.n_train as f64 * r.mse_train + r.n_test as f64 * r.mse_test;
            assert!((lhs - rhs).abs() < 1e-10 * lhs.max(1.0), "{}", r.key);
        }
    }

    #[test]
    fn missing_column_fails_cell_only() {
        let g = run_grid(
            &[toy_stock(200, 5)],
            &GridSpec {
                sets: vec![PredictorSet::Msi, PredictorSet::Bsi],
                include_full: false,
                ..spec()
            },
        );
        assert_eq!(g.failures.len(), 2);
        assert_eq!(g.reports.len(), 2);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let stocks = [toy_stock(300, 6)];
        let mut s = GridSpec {
            models: vec![ModelKind::Lstm, ModelKind::Var],
            lstm: LstmConfig {
                epochs: 5,
                ..Default::default()
            },
            jobs: 1,
            ..spec()
        };
        let a = run_grid(&stocks, &s);
        s.jobs = 4;
        let b = run_grid(&stocks, &s);
        assert_eq!(a, b);
    }

    #[test]
    fn names_parse() {
        for p in PredictorSet::ALL {
            assert_eq!(p.name().parse::<PredictorSet>().unwrap(), p);
        }
        assert_eq!(
            PredictorSet::Mixture.columns(&["c".into()]),
            vec!["r", "bsi", "osi", "msi", "c"]
        );
    }
}
