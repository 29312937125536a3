//! A complete set of pipeline inputs, loaded from or written to a directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::market::ingest::{self, IngestError, PostFormat, RowError};
use crate::market::{FactorSeries, LabeledPost, MarketClock, OptionChainSnapshot, PriceSeries, TradingCalendar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Base directory for the relative paths below.
    pub dir: Option<PathBuf>,
    pub calendar: PathBuf,
    pub posts: PathBuf,
    pub prices: PathBuf,
    pub options: PathBuf,
    pub factors: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            dir: None,
            calendar: "calendar.csv".into(),
            posts: "posts.csv".into(),
            prices: "prices.csv".into(),
            options: "options.csv".into(),
            factors: "factors.csv".into(),
        }
    }
}

impl DataPaths {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        DataPaths {
            dir: Some(dir.into()),
            ..Default::default()
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub calendar: TradingCalendar,
    pub posts: Vec<LabeledPost>,
    pub prices: BTreeMap<String, PriceSeries>,
    pub chains: Vec<OptionChainSnapshot>,
    pub factors: BTreeMap<String, FactorSeries>,
}

/// Non-fatal row problems per input file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub row_errors: BTreeMap<String, Vec<RowError>>,
}

impl LoadReport {
    pub fn total(&self) -> usize {
        self.row_errors.values().map(Vec::len).sum()
    }
}

/// Which inputs a command needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Needs {
    pub posts: bool,
    pub options: bool,
    pub factors: bool,
}

impl Needs {
    pub const ALL: Needs = Needs {
        posts: true,
        options: true,
        factors: true,
    };
}

fn record<T>(report: &mut LoadReport, path: &Path, ing: ingest::Ingested<T>) -> Vec<T> {
    if !ing.errors.is_empty() {
        report.row_errors.insert(path.display().to_string(), ing.errors);
    }
    ing.records
}

impl Dataset {
    /// Loads every needed file. File-level failures are collected and
    /// returned together.
    pub fn load(
        paths: &DataPaths,
        clock: MarketClock,
        needs: Needs,
    ) -> Result<(Dataset, LoadReport), Vec<IngestError>> {
        let mut errors = Vec::new();
        let mut report = LoadReport::default();

        let cal_path = paths.resolve(&paths.calendar);
        let calendar = ingest::load_calendar(&cal_path, clock).map_err(|e| errors.push(e)).ok();

        let price_path = paths.resolve(&paths.prices);
        let prices = match ingest::load_prices(&price_path) {
            Ok(ing) => ingest::group_prices(&record(&mut report, &price_path, ing)),
            Err(e) => {
                errors.push(e);
                BTreeMap::new()
            }
        };

        let mut posts = Vec::new();
        if needs.posts {
            let p = paths.resolve(&paths.posts);
            match ingest::load_posts(&p, PostFormat::from_path(&p)) {
                Ok(ing) => posts = record(&mut report, &p, ing),
                Err(e) => errors.push(e),
            }
        }
        let mut chains = Vec::new();
        if needs.options {
            let p = paths.resolve(&paths.options);
            match ingest::load_options(&p) {
                Ok(ing) => chains = ingest::group_chains(&record(&mut report, &p, ing)),
                Err(e) => errors.push(e),
            }
        }
        let mut factors = BTreeMap::new();
        if needs.factors {
            let p = paths.resolve(&paths.factors);
            match ingest::load_factors(&p) {
                Ok(ing) => factors = ingest::group_factors(&record(&mut report, &p, ing)),
                Err(e) => errors.push(e),
            }
        }
        match calendar {
            Some(calendar) if errors.is_empty() => Ok((
                Dataset {
                    calendar,
                    posts,
                    prices,
                    chains,
                    factors,
                },
                report,
            )),
            _ => Err(errors),
        }
    }

    /// Writes the five input files into `dir`, each starting with `header`
    /// as a comment line.
    pub fn write(&self, dir: &Path, header: &str) -> Result<Vec<PathBuf>, IngestError> {
        std::fs::create_dir_all(dir)?;
        let paths = DataPaths::in_dir(dir);
        let open = |p: &Path| -> Result<BufWriter<File>, IngestError> {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{header}")?;
            Ok(w)
        };
        let mut written = Vec::new();

        let p = paths.resolve(&paths.calendar);
        let mut w = open(&p)?;
        writeln!(w, "date")?;
        for d in self.calendar.dates() {
            writeln!(w, "{d}")?;
        }
        w.flush()?;
        written.push(p);

        let p = paths.resolve(&paths.posts);
        let mut w = open(&p)?;
        ingest::write_posts(&mut w, PostFormat::Csv, &self.posts)?;
        w.flush()?;
        written.push(p);

        let p = paths.resolve(&paths.prices);
        let mut w = open(&p)?;
        writeln!(w, "date,stock_id,close")?;
        for s in self.prices.values() {
            for (d, c) in &s.closes {
                writeln!(w, "{d},{},{c}", s.stock_id)?;
            }
        }
        w.flush()?;
        written.push(p);

        let p = paths.resolve(&paths.options);
        let mut w = open(&p)?;
        ingest::write_options(&mut w, &self.chains)?;
        w.flush()?;
        written.push(p);

        let p = paths.resolve(&paths.factors);
        let mut w = open(&p)?;
        writeln!(w, "date,name,value")?;
        // date-major, like a daily data feed
        let mut by_date: BTreeMap<chrono::NaiveDate, Vec<(&str, f64)>> = BTreeMap::new();
        for f in self.factors.values() {
            for (d, v) in &f.values {
                by_date.entry(*d).or_default().push((&f.name, *v));
            }
        }
        for (d, vals) in by_date {
            for (name, v) in vals {
                writeln!(w, "{d},{name},{v}")?;
            }
        }
        w.flush()?;
        written.push(p);
        Ok(written)
    }

    pub fn stock_ids(&self) -> Vec<String> {
        self.prices.keys().cloned().collect()
    }
}
