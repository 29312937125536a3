//! Builds the three sentiment indices and the aligned experiment panel for
//! each stock from a loaded dataset.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::dataset::Dataset;
use crate::experiment::{MsiInputs, PredictorSet, StockPanel};
use crate::market::{LabeledPost, OptionChainSnapshot, SentimentSeries};
use crate::options::{osi_series, OsiBuild};
use crate::panel::{align_and_fill, FillStats, SeriesInput};
use crate::pca::{fit_pca_on, msi_series, PcaError, PcaModel};
use crate::textual::{bsi_series, consolidate_votes, daily_polarity_counts, CountDiagnostics, TextualError};

#[derive(Error, Debug)]
pub enum IndexError {
    #[error("stock `{0}` has no prices")]
    UnknownStock(String),
    #[error(transparent)]
    Textual(#[from] TextualError),
    #[error("MSI for {stock}: {source}")]
    Msi { stock: String, source: PcaError },
    #[error("panel for {stock}: {message}")]
    Panel { stock: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsiBuild {
    pub model: PcaModel,
    pub series: SentimentSeries,
}

#[derive(Debug, Clone)]
pub struct StockIndices {
    pub stock_id: String,
    pub returns: BTreeMap<NaiveDate, f64>,
    pub bsi: SentimentSeries,
    pub bsi_diagnostics: CountDiagnostics,
    /// Posts dropped by vote consolidation.
    pub discarded_posts: usize,
    pub osi: Option<OsiBuild>,
    pub msi: Option<MsiBuild>,
}

/// Which indices to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexSet {
    pub bsi: bool,
    pub osi: bool,
    pub msi: bool,
}

impl IndexSet {
    pub const ALL: IndexSet = IndexSet {
        bsi: true,
        osi: true,
        msi: true,
    };

    pub fn for_sets(sets: &[PredictorSet]) -> IndexSet {
        let has = |name: &str| sets.iter().any(|s| s.indices().contains(&name));
        IndexSet {
            bsi: has("bsi"),
            osi: has("osi"),
            msi: has("msi"),
        }
    }
}

/// Stocks selected by the config, or every stock with prices.
pub fn selected_stocks(dataset: &Dataset, cfg: &PipelineConfig) -> Vec<String> {
    if cfg.stocks.is_empty() {
        dataset.stock_ids()
    } else {
        cfg.stocks.clone()
    }
}

pub fn build_stock_indices(
    dataset: &Dataset,
    stock: &str,
    cfg: &PipelineConfig,
    which: IndexSet,
) -> Result<StockIndices, IndexError> {
    let prices = dataset
        .prices
        .get(stock)
        .ok_or_else(|| IndexError::UnknownStock(stock.to_string()))?;
    let returns = prices.log_returns(&dataset.calendar);

    let mut discarded_posts = 0;
    let (bsi, bsi_diagnostics) = if which.bsi {
        let own: Vec<LabeledPost> = dataset.posts.iter().filter(|p| p.stock_id == stock).cloned().collect();
        let labeled = match cfg.bsi.min_agreement {
            Some(k) => {
                let c = consolidate_votes(&own, k)?;
                discarded_posts = c.discarded.len();
                c.labeled
            }
            None => own,
        };
        let (counts, diag) = daily_polarity_counts(&labeled, stock, &dataset.calendar, cfg.bsi.include_spam);
        (bsi_series(stock, &counts), diag)
    } else {
        (SentimentSeries::new("bsi", stock), CountDiagnostics::default())
    };

    let osi = which.osi.then(|| {
        let chains: Vec<OptionChainSnapshot> = dataset.chains.iter().filter(|c| c.stock_id == stock).cloned().collect();
        osi_series(&chains, stock, &cfg.osi)
    });

    let msi = if which.msi {
        let names = cfg.msi.factors_for(stock);
        let anchor = cfg.msi.anchor_for(stock);
        let err = |source| IndexError::Msi {
            stock: stock.to_string(),
            source,
        };
        let dates = dataset.calendar.dates().iter().copied();
        let model = fit_pca_on(&dataset.factors, &names, dates.clone(), &anchor).map_err(err)?;
        let series = msi_series(&model, &dataset.factors, dates, stock).map_err(err)?;
        Some(MsiBuild { model, series })
    } else {
        None
    };

    Ok(StockIndices {
        stock_id: stock.to_string(),
        returns,
        bsi,
        bsi_diagnostics,
        discarded_posts,
        osi,
        msi,
    })
}

/// Aligns return, the requested indices (whole-sample MSI) and controls.
pub fn build_stock_panel(
    dataset: &Dataset,
    idx: &StockIndices,
    cfg: &PipelineConfig,
    which: IndexSet,
) -> Result<(StockPanel, FillStats), IndexError> {
    let stock = &idx.stock_id;
    let mut inputs = vec![SeriesInput::new("r", idx.returns.clone()).unfilled()];
    if which.bsi {
        inputs.push(SeriesInput::new("bsi", idx.bsi.observed()));
    }
    if which.osi {
        let osi = idx.osi.as_ref().map(|o| o.series.observed()).unwrap_or_default();
        inputs.push(SeriesInput::new("osi", osi));
    }
    if which.msi {
        let msi = idx.msi.as_ref().map(|m| m.series.observed()).unwrap_or_default();
        inputs.push(SeriesInput::new("msi", msi));
    }
    for c in &cfg.controls {
        let values = dataset.factors.get(c).map(|f| f.values.clone()).unwrap_or_default();
        inputs.push(SeriesInput::new(c.clone(), values));
    }
    let (panel, fill) =
        align_and_fill(stock, &inputs, &dataset.calendar, cfg.panel.fill).map_err(|e| IndexError::Panel {
            stock: stock.clone(),
            message: e.to_string(),
        })?;
    let msi = which.msi.then(|| {
        let names = cfg.msi.factors_for(stock);
        MsiInputs {
            factors: names
                .iter()
                .filter_map(|n| dataset.factors.get(n).map(|f| (n.clone(), f.clone())))
                .collect(),
            names,
            anchor: cfg.msi.anchor_for(stock),
        }
    });
    Ok((
        StockPanel {
            stock_id: stock.clone(),
            panel,
            controls: cfg.controls.clone(),
            msi,
        },
        fill,
    ))
}

/// Indices and panels for every selected stock, in stock order.
pub fn build_all(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    which: IndexSet,
) -> Result<Vec<(StockIndices, StockPanel, FillStats)>, IndexError> {
    selected_stocks(dataset, cfg)
        .par_iter()
        .map(|s| {
            let idx = build_stock_indices(dataset, s, cfg, which)?;
            let (panel, fill) = build_stock_panel(dataset, &idx, cfg, which)?;
            Ok((idx, panel, fill))
        })
        .collect()
}
