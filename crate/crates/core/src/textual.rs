//! Textual sentiment: expert vote consolidation, micro-averaged evaluation of
//! external classifier output, and the daily BSI series.

use std::collections::{HashMap, HashSet};

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

use crate::market::{LabeledPost, Polarity, SentimentSeries, TradingCalendar};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TextualError {
    #[error("min_agreement must be at least 1")]
    InvalidAgreement,
    #[error("duplicate predicted id {0}")]
    DuplicatePrediction(String),
    #[error("duplicate gold id {0}")]
    DuplicateGold(String),
    #[error("predicted id {0} not present in gold")]
    UnknownId(String),
    #[error("gold set is empty, metrics undefined")]
    EmptyGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    Unvoted,
    NoConsensus,
}

#[derive(Debug, Clone, Default)]
pub struct Consolidation {
    pub labeled: Vec<LabeledPost>,
    pub discarded: Vec<(LabeledPost, DiscardReason)>,
}

/// Labels each post with the unique polarity that received at least
/// `min_agreement` votes. Posts without such a polarity are discarded.
pub fn consolidate_votes(posts: &[LabeledPost], min_agreement: usize) -> Result<Consolidation, TextualError> {
    if min_agreement == 0 {
        return Err(TextualError::InvalidAgreement);
    }
    let mut out = Consolidation::default();
    for post in posts {
        if post.votes.is_empty() {
            out.discarded.push((post.clone(), DiscardReason::Unvoted));
            continue;
        }
        let mut tally = [0usize; 3];
        for v in &post.votes {
            tally[v.index()] += 1;
        }
        let mut winners = Polarity::ALL.into_iter().filter(|p| tally[p.index()] >= min_agreement);
        match (winners.next(), winners.next()) {
            (Some(p), None) => {
                let mut labeled = post.clone();
                labeled.label = Some(p);
                out.labeled.push(labeled);
            }
            _ => out.discarded.push((post.clone(), DiscardReason::NoConsensus)),
        }
    }
    Ok(out)
}

/// Replaces post labels with classifier output; posts the classifier
/// abstained on or never saw end up unlabeled.
pub fn apply_predictions(posts: &[LabeledPost], predictions: &[(String, Option<Polarity>)]) -> Vec<LabeledPost> {
    let by_id: HashMap<&str, Option<Polarity>> = predictions.iter().map(|(id, p)| (id.as_str(), *p)).collect();
    posts
        .iter()
        .map(|p| LabeledPost {
            label: by_id.get(p.post_id.as_str()).copied().flatten(),
            ..p.clone()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Micro-averaged evaluation of a three-way classifier with abstentions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierEvalReport {
    /// Rows are gold pos/neu/neg, columns predicted pos/neu/neg/abstain.
    pub confusion: [[u64; 4]; 3],
    pub per_class: [ClassCounts; 3],
    pub n_items: u64,
    pub n_abstained: u64,
    /// `None` when nothing was predicted.
    pub precision: Option<f64>,
    pub recall: f64,
    pub f1: Option<f64>,
}

impl ClassifierEvalReport {
    pub fn totals(&self) -> ClassCounts {
        self.per_class.iter().fold(ClassCounts::default(), |a, c| ClassCounts {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
        })
    }
}

/// Pools TP/FP/FN over the three classes. Gold items without a prediction
/// count as abstentions, which add a false negative and no false positive.
pub fn micro_metrics(
    predicted: &[(String, Option<Polarity>)],
    gold: &[(String, Polarity)],
) -> Result<ClassifierEvalReport, TextualError> {
    if gold.is_empty() {
        return Err(TextualError::EmptyGold);
    }
    let mut gold_ids = HashSet::with_capacity(gold.len());
    for (id, _) in gold {
        if !gold_ids.insert(id.as_str()) {
            return Err(TextualError::DuplicateGold(id.clone()));
        }
    }
    let mut preds: HashMap<&str, Option<Polarity>> = HashMap::with_capacity(predicted.len());
    for (id, p) in predicted {
        if !gold_ids.contains(id.as_str()) {
            return Err(TextualError::UnknownId(id.clone()));
        }
        if preds.insert(id.as_str(), *p).is_some() {
            return Err(TextualError::DuplicatePrediction(id.clone()));
        }
    }

    let mut confusion = [[0u64; 4]; 3];
    let mut per_class = [ClassCounts::default(); 3];
    for (id, truth) in gold {
        let g = truth.index();
        match preds.get(id.as_str()).copied().flatten() {
            Some(p) if p == *truth => {
                confusion[g][p.index()] += 1;
                per_class[g].tp += 1;
            }
            Some(p) => {
                confusion[g][p.index()] += 1;
                per_class[p.index()].fp += 1;
                per_class[g].fn_ += 1;
            }
            None => {
                confusion[g][3] += 1;
                per_class[g].fn_ += 1;
            }
        }
    }

    let n_abstained = confusion.iter().map(|r| r[3]).sum();
    let mut report = ClassifierEvalReport {
        confusion,
        per_class,
        n_items: gold.len() as u64,
        n_abstained,
        precision: None,
        recall: 0.0,
        f1: None,
    };
    let t = report.totals();
    report.recall = t.tp as f64 / (t.tp + t.fn_) as f64;
    if t.tp + t.fp > 0 {
        let p = t.tp as f64 / (t.tp + t.fp) as f64;
        report.precision = Some(p);
        report.f1 = Some(if p + report.recall > 0.0 {
            2.0 * p * report.recall / (p + report.recall)
        } else {
            0.0
        });
    }
    Ok(report)
}

/// Post counts per polarity on one trading day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PolarityCounts {
    pub date: NaiveDate,
    pub pos: u32,
    pub neu: u32,
    pub neg: u32,
}

impl PolarityCounts {
    pub fn total(&self) -> u32 {
        self.pos + self.neu + self.neg
    }

    /// `(Pos - Neg) / (Pos + Neu + Neg)`, `None` on a day without posts.
    pub fn bsi(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| (self.pos as f64 - self.neg as f64) / n as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CountDiagnostics {
    pub counted: usize,
    pub skipped_spam: usize,
    pub skipped_unlabeled: usize,
    /// Effective date before the first or after the last calendar date.
    pub skipped_out_of_range: usize,
}

/// Counts labeled posts of one stock per effective trading date. Every
/// calendar date gets an entry, zero-post days included.
pub fn daily_polarity_counts(
    posts: &[LabeledPost],
    stock_id: &str,
    calendar: &TradingCalendar,
    include_spam: bool,
) -> (Vec<PolarityCounts>, CountDiagnostics) {
    let mut counts: Vec<PolarityCounts> = calendar
        .dates()
        .iter()
        .map(|&date| PolarityCounts {
            date,
            pos: 0,
            neu: 0,
            neg: 0,
        })
        .collect();
    let mut diag = CountDiagnostics::default();
    let first = calendar.first();
    for post in posts.iter().filter(|p| p.stock_id == stock_id) {
        if post.spam && !include_spam {
            diag.skipped_spam += 1;
            continue;
        }
        let Some(label) = post.label else {
            diag.skipped_unlabeled += 1;
            continue;
        };
        let local_day = post.timestamp.with_timezone(&calendar.clock().utc_offset).date_naive();
        // Posts older than the calendar would otherwise pile up on its first day.
        let day = match calendar.effective_trading_date(&post.timestamp) {
            Ok(day) if local_day >= first => day,
            _ => {
                diag.skipped_out_of_range += 1;
                continue;
            }
        };
        let i = calendar.position(day).expect("effective date is a calendar date");
        let c = &mut counts[i];
        match label {
            Polarity::Positive => c.pos += 1,
            Polarity::Neutral => c.neu += 1,
            Polarity::Negative => c.neg += 1,
        }
        diag.counted += 1;
    }
    (counts, diag)
}

pub fn bsi_series(stock_id: &str, counts: &[PolarityCounts]) -> SentimentSeries {
    let mut s = SentimentSeries::new("bsi", stock_id);
    s.values = counts.iter().map(|c| (c.date, c.bsi())).collect();
    s
}
