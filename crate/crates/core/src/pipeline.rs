//! The five pipeline commands. Each one stages its files under
//! `out/quarantine/<command>` and publishes them only when every file has
//! been written.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{Dataset, LoadReport, Needs};
use crate::experiment::{export_figure_data, render_table, reports_csv, GridResult, StockPanel};
use crate::indices::{build_all, IndexError, IndexSet};
use crate::market::ingest::{self, IngestError};
use crate::market::Polarity;
use crate::output::Stage;
use crate::panel::{normalize, FillStats};
use crate::synth::{generate_synthetic, SynthError, SynthSpec};
use crate::textual::{micro_metrics, TextualError};

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load input data:\n  {}", .0.join("\n  "))]
    Ingest(Vec<String>),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Textual(#[from] TextualError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        PipelineError::Ingest(vec![e.to_string()])
    }
}

/// Published files plus notes worth showing to the user.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn headed(header: &str, columns: &str) -> String {
    format!("{header}\n{columns}\n")
}

/// Generates a synthetic dataset plus an `experiment.json` that points at it.
pub fn synth(spec: &SynthSpec, out: &Path) -> Result<Summary, PipelineError> {
    let syn = generate_synthetic(spec)?;
    let mut stage = Stage::new(out, "synth")?;
    syn.write(stage.staging_dir(), &spec.hash())?;
    let exp = PipelineConfig {
        seed: Some(spec.seed),
        stocks: spec.stocks.clone(),
        ..Default::default()
    };
    stage.write(
        "experiment.json",
        &format!("{}\n{}\n", spec.header(), exp.to_json_pretty()),
    )?;
    Ok(Summary {
        files: stage.commit()?,
        notes: vec![format!(
            "{} trading days, {} stocks, {} posts, {} option chains",
            syn.dataset.calendar.len(),
            spec.stocks.len(),
            syn.dataset.posts.len(),
            syn.dataset.chains.len()
        )],
    })
}

/// Loads the inputs needed for `which`; malformed rows become notes.
pub fn load_dataset(
    cfg: &PipelineConfig,
    which: IndexSet,
) -> Result<(Dataset, LoadReport, Vec<String>), PipelineError> {
    cfg.validate()?;
    let clock = cfg.clock().map_err(PipelineError::Other)?;
    let needs = Needs {
        posts: which.bsi,
        options: which.osi,
        factors: true,
    };
    let (ds, report) = Dataset::load(&cfg.data, clock, needs)
        .map_err(|errs| PipelineError::Ingest(errs.iter().map(|e| e.to_string()).collect()))?;
    let notes = report
        .row_errors
        .iter()
        .map(|(file, errs)| {
            format!(
                "{file}: skipped {} malformed rows (first at line {})",
                errs.len(),
                errs[0].line
            )
        })
        .collect();
    Ok((ds, report, notes))
}

fn write_load_errors(stage: &mut Stage, header: &str, report: &LoadReport) -> std::io::Result<()> {
    if report.total() == 0 {
        return Ok(());
    }
    let mut s = headed(header, "file,line,message");
    for (file, errs) in &report.row_errors {
        for e in errs {
            writeln!(s, "{},{},\"{}\"", file, e.line, e.message.replace('"', "'")).unwrap();
        }
    }
    stage.write("load_errors.csv", &s).map(|_| ())
}

fn fill_stats_csv(header: &str, stats: &[(String, FillStats)]) -> String {
    let mut s = headed(header, "stock_id,column,filled,dropped_rows");
    for (stock, f) in stats {
        for (col, n) in &f.filled {
            writeln!(s, "{stock},{col},{n},{}", f.dropped_rows).unwrap();
        }
    }
    s
}

/// Writes BSI, OSI and whole-sample MSI per stock along with their diagnostics.
pub fn build_indices(cfg: &PipelineConfig, out: &Path) -> Result<Summary, PipelineError> {
    let (ds, report, mut notes) = load_dataset(cfg, IndexSet::ALL)?;
    let built = build_all(&ds, cfg, IndexSet::ALL)?;
    let header = cfg.header();
    let mut stage = Stage::new(out, "build-indices")?;

    let mut idx_csv = headed(&header, "date,stock_id,r,bsi,osi,msi");
    let mut moments = headed(
        &header,
        "date,stock_id,expiry,tau_days,mean,variance,skewness,n_calls,n_puts",
    );
    let mut skipped = headed(&header, "date,stock_id,reason");
    let mut loadings = headed(&header, "stock_id,factor,mean,std,loading");
    let mut diag = headed(
        &header,
        "stock_id,posts_counted,skipped_spam,skipped_unlabeled,skipped_out_of_range,discarded_votes,osi_days,osi_skipped,msi_eigenvalue,msi_explained_variance",
    );
    for (idx, _, _) in &built {
        let stock = &idx.stock_id;
        let osi = idx.osi.as_ref().expect("all indices requested");
        let msi = idx.msi.as_ref().expect("all indices requested");
        for d in ds.calendar.dates() {
            let get = |s: &crate::market::SentimentSeries| s.values.get(d).copied().flatten();
            writeln!(
                idx_csv,
                "{d},{stock},{},{},{},{}",
                opt(idx.returns.get(d).copied()),
                opt(get(&idx.bsi)),
                opt(get(&osi.series)),
                opt(get(&msi.series))
            )
            .unwrap();
        }
        for m in &osi.moments {
            writeln!(
                moments,
                "{},{stock},{},{},{},{},{},{},{}",
                m.date, m.expiry, m.tau_days, m.mean, m.variance, m.skewness, m.n_calls, m.n_puts
            )
            .unwrap();
        }
        for (d, e) in &osi.skipped {
            writeln!(skipped, "{d},{stock},\"{}\"", e.to_string().replace('"', "'")).unwrap();
        }
        let m = &msi.model;
        for (i, f) in m.factors.iter().enumerate() {
            writeln!(loadings, "{stock},{f},{},{},{}", m.means[i], m.stds[i], m.loadings[i]).unwrap();
        }
        let b = &idx.bsi_diagnostics;
        writeln!(
            diag,
            "{stock},{},{},{},{},{},{},{},{},{}",
            b.counted,
            b.skipped_spam,
            b.skipped_unlabeled,
            b.skipped_out_of_range,
            idx.discarded_posts,
            osi.moments.len(),
            osi.skipped.len(),
            m.eigenvalue,
            m.explained_variance_ratio
        )
        .unwrap();
        if !osi.skipped.is_empty() {
            notes.push(format!("{stock}: OSI missing on {} days", osi.skipped.len()));
        }
    }
    stage.write("indices.csv", &idx_csv)?;
    stage.write("osi_moments.csv", &moments)?;
    stage.write("osi_skipped.csv", &skipped)?;
    stage.write("msi_loadings.csv", &loadings)?;
    stage.write("index_diagnostics.csv", &diag)?;
    write_load_errors(&mut stage, &header, &report)?;
    Ok(Summary {
        files: stage.commit()?,
        notes,
    })
}

/// Panels for every selected stock with the columns the configured
/// predictor sets need.
pub fn build_panels(
    cfg: &PipelineConfig,
) -> Result<(Vec<StockPanel>, Vec<(String, FillStats)>, LoadReport, Vec<String>), PipelineError> {
    let which = IndexSet::for_sets(&cfg.models.predictor_sets);
    let (ds, report, notes) = load_dataset(cfg, which)?;
    let built = build_all(&ds, cfg, which)?;
    let mut panels = Vec::with_capacity(built.len());
    let mut fills = Vec::with_capacity(built.len());
    for (idx, panel, fill) in built {
        fills.push((idx.stock_id, fill));
        panels.push(panel);
    }
    Ok((panels, fills, report, notes))
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub summary: Summary,
    pub grid: GridResult,
}

/// Runs every (stock, period, predictor set, model) cell and writes the
/// reports, the text table, split assignments and per-cell figure data.
pub fn run_experiment(cfg: &PipelineConfig, out: &Path) -> Result<ExperimentRun, PipelineError> {
    let (panels, fills, report, mut notes) = build_panels(cfg)?;
    let grid = crate::experiment::run_grid(&panels, &cfg.grid_spec());
    let header = cfg.header();
    let mut stage = Stage::new(out, "run-experiment")?;

    stage.write("reports.csv", &reports_csv(&grid.reports, &header))?;
    stage.write("table.txt", &format!("{header}\n{}", render_table(&grid.reports)))?;
    let mut failures = headed(&header, "stock,period,predictor_set,model,error");
    for f in &grid.failures {
        let k = &f.key;
        writeln!(
            failures,
            "{},{},{},{},\"{}\"",
            k.stock,
            k.period,
            k.set,
            k.model,
            f.error.replace('"', "'")
        )
        .unwrap();
        notes.push(format!("cell {k} failed: {}", f.error));
    }
    stage.write("failures.csv", &failures)?;

    let mut splits = headed(&header, "stock,year,date,set");
    for (stock, ss) in &grid.splits {
        for s in ss {
            let year = s.year.map(|y| y.to_string()).unwrap_or_default();
            let mut rows: Vec<_> = s
                .train
                .iter()
                .map(|d| (d, "train"))
                .chain(s.test.iter().map(|d| (d, "test")))
                .collect();
            rows.sort();
            for (d, set) in rows {
                writeln!(splits, "{stock},{year},{d},{set}").unwrap();
            }
        }
    }
    stage.write("splits.csv", &splits)?;
    stage.write("fill_stats.csv", &fill_stats_csv(&header, &fills))?;
    let fig_dir = stage.path("figures")?;
    for r in &grid.reports {
        export_figure_data(r, &fig_dir, &header)?;
    }
    write_load_errors(&mut stage, &header, &report)?;
    Ok(ExperimentRun {
        summary: Summary {
            files: stage.commit()?,
            notes,
        },
        grid,
    })
}

/// Writes each stock's aligned panel. With whole-sample normalization the
/// standardized columns follow the raw ones with a `z_` prefix.
pub fn dump_panel(cfg: &PipelineConfig, out: &Path) -> Result<Summary, PipelineError> {
    let (panels, fills, report, notes) = build_panels(cfg)?;
    let header = cfg.header();
    let mut stage = Stage::new(out, "dump-panel")?;
    for sp in &panels {
        let p = &sp.panel;
        let z = if cfg.panel.normalize_whole_sample {
            let all: BTreeSet<_> = p.dates.iter().copied().collect();
            Some(normalize(p, &all).map_err(|e| PipelineError::Other(format!("{}: {e}", sp.stock_id)))?)
        } else {
            None
        };
        let mut cols = vec!["date".to_string()];
        cols.extend(p.columns.iter().cloned());
        if z.is_some() {
            cols.extend(p.columns.iter().map(|c| format!("z_{c}")));
        }
        let mut s = headed(&header, &cols.join(","));
        for (i, d) in p.dates.iter().enumerate() {
            let mut row = vec![d.to_string()];
            row.extend(p.raw[i].iter().map(|v| v.to_string()));
            if let Some(zp) = &z {
                row.extend(zp.values()[i].iter().map(|v| v.to_string()));
            }
            writeln!(s, "{}", row.join(",")).unwrap();
        }
        stage.write(format!("panel_{}.csv", sp.stock_id), &s)?;
    }
    stage.write("fill_stats.csv", &fill_stats_csv(&header, &fills))?;
    write_load_errors(&mut stage, &header, &report)?;
    Ok(Summary {
        files: stage.commit()?,
        notes,
    })
}

/// Micro-averaged precision, recall and F1 of predicted polarities against
/// gold labels; items without a prediction count as abstentions.
pub fn eval_classifier(predictions: &Path, gold: &Path, header: &str, out: &Path) -> Result<Summary, PipelineError> {
    let preds = ingest::load_predictions(predictions)?;
    let gold_rows = ingest::load_gold(gold)?;
    let mut notes = Vec::new();
    for (p, n) in [(predictions, preds.errors.len()), (gold, gold_rows.errors.len())] {
        if n > 0 {
            notes.push(format!("{}: skipped {n} malformed rows", p.display()));
        }
    }
    let rep = micro_metrics(&preds.records, &gold_rows.records)?;
    let mut stage = Stage::new(out, "eval-classifier")?;
    let t = rep.totals();
    let mut s = headed(header, "metric,value");
    for (k, v) in [
        ("n_items", rep.n_items.to_string()),
        ("n_abstained", rep.n_abstained.to_string()),
        ("tp", t.tp.to_string()),
        ("fp", t.fp.to_string()),
        ("fn", t.fn_.to_string()),
        ("precision", opt(rep.precision)),
        ("recall", rep.recall.to_string()),
        ("f1", opt(rep.f1)),
    ] {
        writeln!(s, "{k},{v}").unwrap();
    }
    stage.write("classifier_metrics.csv", &s)?;
    let mut c = headed(header, "gold,pos,neu,neg,abstain");
    for (g, row) in Polarity::ALL.iter().zip(&rep.confusion) {
        writeln!(c, "{},{},{},{},{}", g.token(), row[0], row[1], row[2], row[3]).unwrap();
    }
    stage.write("confusion.csv", &c)?;
    notes.push(format!(
        "precision {} recall {:.4} f1 {}",
        rep.precision.map_or("n/a".into(), |p| format!("{p:.4}")),
        rep.recall,
        rep.f1.map_or("n/a".into(), |f| format!("{f:.4}"))
    ));
    Ok(Summary {
        files: stage.commit()?,
        notes,
    })
}
