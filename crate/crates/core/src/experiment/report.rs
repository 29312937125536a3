use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{ForecastReport, Period, PredictorSet, SeriesPoint};
use crate::forecast::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum DateSet {
    Train,
    Test,
    Whole,
}

impl DateSet {
    pub const ALL: [DateSet; 3] = [DateSet::Train, DateSet::Test, DateSet::Whole];

    pub fn label(&self) -> &'static str {
        match self {
            DateSet::Train => "D_tr",
            DateSet::Test => "D_te",
            DateSet::Whole => "D_wh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct MarkupKey {
    pub stock: String,
    pub period: Period,
    pub model: ModelKind,
    pub date_set: DateSet,
}

/// Predictor sets with the smallest MSE in each (stock, period, model, date
/// set) group. Exact ties are all flagged.
pub fn best_predictor_markup(reports: &[ForecastReport]) -> BTreeMap<MarkupKey, Vec<PredictorSet>> {
    let mut best: BTreeMap<MarkupKey, (f64, Vec<PredictorSet>)> = BTreeMap::new();
    for r in reports {
        for ds in DateSet::ALL {
            let key = MarkupKey {
                stock: r.key.stock.clone(),
                period: r.key.period,
                model: r.key.model,
                date_set: ds,
            };
            let v = r.mse(ds);
            let entry = best.entry(key).or_insert((f64::INFINITY, Vec::new()));
            if v < entry.0 {
                *entry = (v, vec![r.key.set]);
            } else if v == entry.0 {
                entry.1.push(r.key.set);
            }
        }
    }
    best.into_iter()
        .map(|(k, (_, mut sets))| {
            sets.sort();
            sets.dedup();
            (k, sets)
        })
        .collect()
}

/// `stock, period, predictor_set, model, mse_train, mse_test, mse_whole, n_train, n_test`.
pub fn reports_csv(reports: &[ForecastReport], header: &str) -> String {
    let mut s = String::new();
    writeln!(s, "{header}").unwrap();
    writeln!(
        s,
        "stock,period,predictor_set,model,mse_train,mse_test,mse_whole,n_train,n_test"
    )
    .unwrap();
    for r in reports {
        writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{:.6},{},{}",
            r.key.stock,
            r.key.period,
            r.key.set,
            r.key.model,
            r.mse_train,
            r.mse_test,
            r.mse_whole,
            r.n_train,
            r.n_test
        )
        .unwrap();
    }
    s
}

/// Text table in the layout of the paper: one block per stock and period,
/// one row per predictor set, three MSE columns per model. The best set in
/// each column carries a `*`.
pub fn render_table(reports: &[ForecastReport]) -> String {
    let markup = best_predictor_markup(reports);
    let mut models: Vec<ModelKind> = reports.iter().map(|r| r.key.model).collect();
    models.sort();
    models.dedup();
    let mut blocks: BTreeMap<(&str, Period), BTreeMap<PredictorSet, BTreeMap<ModelKind, &ForecastReport>>> =
        BTreeMap::new();
    for r in reports {
        blocks
            .entry((&r.key.stock, r.key.period))
            .or_default()
            .entry(r.key.set)
            .or_default()
            .insert(r.key.model, r);
    }

    let mut out = String::new();
    writeln!(out, "MSE (unit 1e-5)").unwrap();
    for ((stock, period), rows) in &blocks {
        writeln!(out).unwrap();
        write!(out, "{stock} {period:<6} {:<8}", "").unwrap();
        for m in &models {
            write!(out, "| {:<29}", m.name()).unwrap();
        }
        writeln!(out).unwrap();
        write!(out, "{:<21}", "").unwrap();
        for _ in &models {
            write!(out, "| {:<9}{:<10}{:<10}", "D_tr", "D_te", "D_wh").unwrap();
        }
        writeln!(out).unwrap();
        for (set, by_model) in rows {
            write!(out, "{:<21}", set.name()).unwrap();
            for m in &models {
                write!(out, "| ").unwrap();
                for ds in DateSet::ALL {
                    match by_model.get(m) {
                        Some(r) => {
                            let key = MarkupKey {
                                stock: stock.to_string(),
                                period: *period,
                                model: *m,
                                date_set: ds,
                            };
                            let star = if markup.get(&key).is_some_and(|s| s.contains(set)) {
                                "*"
                            } else {
                                ""
                            };
                            write!(out, "{:<10}", format!("{:.2}{star}", r.mse(ds))).unwrap();
                        }
                        None => write!(out, "{:<10}", "-").unwrap(),
                    }
                }
            }
            writeln!(out).unwrap();
        }
    }
    out
}

/// `date, real, predicted` over the test dates in ascending date order.
pub fn figure_csv(report: &ForecastReport, header: &str) -> String {
    let mut pts: Vec<SeriesPoint> = report.test.clone();
    pts.sort_by_key(|p| p.date);
    let mut s = String::new();
    writeln!(s, "{header}").unwrap();
    writeln!(s, "date,real,predicted").unwrap();
    for p in pts {
        writeln!(s, "{},{},{}", p.date, p.real, p.predicted).unwrap();
    }
    s
}

/// Writes the figure file for one report into `dir` and returns its path.
pub fn export_figure_data(report: &ForecastReport, dir: &Path, header: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let k = &report.key;
    let path = dir.join(format!("{}_{}_{}_{}.csv", k.stock, k.model, k.set, k.period));
    std::fs::write(&path, figure_csv(report, header))?;
    Ok(path)
}
