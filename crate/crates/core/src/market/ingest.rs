//! CSV / JSONL readers and writers for every input file kind.
//!
//! Readers are total: each data row either becomes a record or a [`RowError`]
//! carrying its line number. Structural problems (unreadable file, missing
//! required column) are fatal and reported as [`IngestError`].
//! Lines starting with `#` are comments.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{
    DataError, FactorSeries, LabeledPost, MarketClock, OptionChainSnapshot, OptionQuote, Polarity, PriceSeries,
    TradingCalendar,
};

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: String, column: &'static str },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: line {line}: {message}")]
    Fatal { path: String, line: u64, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the source file.
    pub line: u64,
    pub message: String,
}

/// Parsed records plus the rows that could not be parsed.
#[derive(Debug, Clone)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub errors: Vec<RowError>,
}

impl<T> Ingested<T> {
    pub fn rows(&self) -> usize {
        self.records.len() + self.errors.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PostFormat {
    #[default]
    Csv,
    Jsonl,
}

impl PostFormat {
    /// Guess from the file extension; anything but `.jsonl`/`.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => PostFormat::Jsonl,
            _ => PostFormat::Csv,
        }
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Open {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_reader<R: Read>(rdr: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(rdr)
}

/// Column lookup over a CSV header.
struct Columns {
    idx: HashMap<String, usize>,
    path: String,
}

impl Columns {
    fn new<R: Read>(rdr: &mut csv::Reader<R>, path: &str) -> Result<Self, IngestError> {
        let headers = rdr.headers().map_err(|source| IngestError::Csv {
            path: path.to_string(),
            source,
        })?;
        let idx = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        Ok(Columns {
            idx,
            path: path.to_string(),
        })
    }

    fn require(&self, name: &'static str) -> Result<usize, IngestError> {
        self.idx.get(name).copied().ok_or_else(|| IngestError::MissingColumn {
            path: self.path.clone(),
            column: name,
        })
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.idx.get(name).copied()
    }
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, name: &str) -> Result<&'a str, String> {
    match rec.get(i) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(format!("missing value for `{name}`")),
    }
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| format!("bad date {s:?}: {e}"))
}

fn parse_f64(s: &str, name: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad number for `{name}`: {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite `{name}`: {s:?}"))
    }
}

/// Runs `parse` over every data row, sorting rows into records and errors.
fn read_rows<R: Read, T>(
    rdr: &mut csv::Reader<R>,
    path: &str,
    mut parse: impl FnMut(&csv::StringRecord) -> Result<T, String>,
) -> Result<Ingested<T>, IngestError> {
    let mut out = Ingested {
        records: Vec::new(),
        errors: Vec::new(),
    };
    for rec in rdr.records() {
        match rec {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                match parse(&rec) {
                    Ok(v) => out.records.push(v),
                    Err(message) => out.errors.push(RowError { line, message }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(IngestError::Csv {
                        path: path.to_string(),
                        source: e,
                    });
                }
                out.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

fn parse_votes(s: &str) -> Result<Vec<Polarity>, String> {
    s.split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<Polarity>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_label(s: &str) -> Result<Option<Polarity>, String> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        s.parse::<Polarity>().map(Some).map_err(|e| e.to_string())
    }
}

fn parse_spam(s: &str) -> Result<bool, String> {
    match s.trim() {
        "" | "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(format!("bad spam flag {other:?}")),
    }
}

fn parse_timestamp(s: &str) -> Result<DateTime<chrono::FixedOffset>, String> {
    DateTime::parse_from_rfc3339(s).map_err(|e| format!("bad timestamp {s:?}: {e}"))
}

pub fn load_posts(path: &Path, format: PostFormat) -> Result<Ingested<LabeledPost>, IngestError> {
    let file = open(path)?;
    let name = path.display().to_string();
    match format {
        PostFormat::Csv => read_posts_csv(file, &name),
        PostFormat::Jsonl => read_posts_jsonl(BufReader::new(file), &name),
    }
}

pub fn read_posts_csv<R: Read>(reader: R, path: &str) -> Result<Ingested<LabeledPost>, IngestError> {
    let mut rdr = csv_reader(reader);
    let cols = Columns::new(&mut rdr, path)?;
    let (id, stock, ts) = (
        cols.require("post_id")?,
        cols.require("stock_id")?,
        cols.require("timestamp")?,
    );
    let (votes, label, spam) = (cols.optional("votes"), cols.optional("label"), cols.optional("spam"));
    let opt =
        |rec: &csv::StringRecord, i: Option<usize>| -> String { i.and_then(|i| rec.get(i)).unwrap_or("").to_string() };
    read_rows(&mut rdr, path, |rec| {
        Ok(LabeledPost {
            post_id: field(rec, id, "post_id")?.to_string(),
            stock_id: field(rec, stock, "stock_id")?.to_string(),
            timestamp: parse_timestamp(field(rec, ts, "timestamp")?)?,
            votes: parse_votes(&opt(rec, votes))?,
            label: parse_label(&opt(rec, label))?,
            spam: parse_spam(&opt(rec, spam))?,
        })
    })
}

fn json_str<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a str, String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s),
        Some(Value::String(_)) | None | Some(Value::Null) => Err(format!("missing value for `{key}`")),
        Some(other) => Err(format!("`{key}` must be a string, got {other}")),
    }
}

fn json_post(line: &str) -> Result<LabeledPost, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("row is not a JSON object")?;
    let votes = match obj.get("votes") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::String(s)) => parse_votes(s)?,
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| format!("bad vote {v}"))
                    .and_then(|s| s.parse::<Polarity>().map_err(|e| e.to_string()))
            })
            .collect::<Result<_, _>>()?,
        Some(other) => return Err(format!("bad votes {other}")),
    };
    let label = match obj.get("label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => parse_label(s)?,
        Some(other) => return Err(format!("bad label {other}")),
    };
    let spam = match obj.get("spam") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(Value::Number(n)) => parse_spam(&n.to_string())?,
        Some(Value::String(s)) => parse_spam(s)?,
        Some(other) => return Err(format!("bad spam flag {other}")),
    };
    Ok(LabeledPost {
        post_id: json_str(obj, "post_id")?.to_string(),
        stock_id: json_str(obj, "stock_id")?.to_string(),
        timestamp: parse_timestamp(json_str(obj, "timestamp")?)?,
        votes,
        label,
        spam,
    })
}

pub fn read_posts_jsonl<R: BufRead>(reader: R, _path: &str) -> Result<Ingested<LabeledPost>, IngestError> {
    let mut out = Ingested {
        records: Vec::new(),
        errors: Vec::new(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match json_post(trimmed) {
            Ok(p) => out.records.push(p),
            Err(message) => out.errors.push(RowError {
                line: i as u64 + 1,
                message,
            }),
        }
    }
    Ok(out)
}

fn join_votes(votes: &[Polarity]) -> String {
    votes.iter().map(|v| v.token()).collect::<Vec<_>>().join(";")
}

pub fn write_posts<W: Write>(mut w: W, format: PostFormat, posts: &[LabeledPost]) -> Result<(), IngestError> {
    match format {
        PostFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(["post_id", "stock_id", "timestamp", "votes", "label", "spam"])
                .map_err(csv_io)?;
            for p in posts {
                wtr.write_record([
                    p.post_id.as_str(),
                    p.stock_id.as_str(),
                    &p.timestamp.to_rfc3339(),
                    &join_votes(&p.votes),
                    p.label.map_or("", |l| l.token()),
                    if p.spam { "1" } else { "0" },
                ])
                .map_err(csv_io)?;
            }
            wtr.flush()?;
        }
        PostFormat::Jsonl => {
            for p in posts {
                let row = serde_json::json!({
                    "post_id": p.post_id,
                    "stock_id": p.stock_id,
                    "timestamp": p.timestamp.to_rfc3339(),
                    "votes": join_votes(&p.votes),
                    "label": p.label.map_or("", |l| l.token()),
                    "spam": u8::from(p.spam),
                });
                writeln!(w, "{row}")?;
            }
        }
    }
    Ok(())
}

fn csv_io(e: csv::Error) -> IngestError {
    IngestError::Io(std::io::Error::other(e))
}

/// Trading calendar file: a `date` column, one trading date per row. Any bad
/// row is fatal since the calendar underpins everything else.
pub fn load_calendar(path: &Path, clock: MarketClock) -> Result<TradingCalendar, IngestError> {
    read_calendar(open(path)?, &path.display().to_string(), clock)
}

pub fn read_calendar<R: Read>(reader: R, path: &str, clock: MarketClock) -> Result<TradingCalendar, IngestError> {
    let mut rdr = csv_reader(reader);
    let cols = Columns::new(&mut rdr, path)?;
    let date = cols.require("date")?;
    let rows = read_rows(&mut rdr, path, |rec| parse_date(field(rec, date, "date")?))?;
    if let Some(e) = rows.errors.first() {
        return Err(IngestError::Fatal {
            path: path.to_string(),
            line: e.line,
            message: e.message.clone(),
        });
    }
    Ok(TradingCalendar::with_clock(rows.records, clock)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRow {
    pub date: NaiveDate,
    pub stock_id: String,
    pub close: f64,
}

pub fn load_prices(path: &Path) -> Result<Ingested<PriceRow>, IngestError> {
    read_prices(open(path)?, &path.display().to_string())
}

pub fn read_prices<R: Read>(reader: R, path: &str) -> Result<Ingested<PriceRow>, IngestError> {
    let mut rdr = csv_reader(reader);
    let cols = Columns::new(&mut rdr, path)?;
    let (date, stock, close) = (cols.require("date")?, cols.require("stock_id")?, cols.require("close")?);
    read_rows(&mut rdr, path, |rec| {
        let close = parse_f64(field(rec, close, "close")?, "close")?;
        if close <= 0.0 {
            return Err(format!("non-positive close {close}"));
        }
        Ok(PriceRow {
            date: parse_date(field(rec, date, "date")?)?,
            stock_id: field(rec, stock, "stock_id")?.to_string(),
            close,
        })
    })
}

/// Groups price rows by stock; later duplicates overwrite earlier ones.
pub fn group_prices(rows: &[PriceRow]) -> BTreeMap<String, PriceSeries> {
    let mut out: BTreeMap<String, PriceSeries> = BTreeMap::new();
    for r in rows {
        out.entry(r.stock_id.clone())
            .or_insert_with(|| PriceSeries::new(r.stock_id.clone()))
            .closes
            .insert(r.date, r.close);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptionRow {
    pub date: NaiveDate,
    pub stock_id: String,
    pub underlying: f64,
    pub rate: f64,
    pub quote: OptionQuote,
}

pub fn load_options(path: &Path) -> Result<Ingested<OptionRow>, IngestError> {
    read_options(open(path)?, &path.display().to_string())
}

pub fn read_options<R: Read>(reader: R, path: &str) -> Result<Ingested<OptionRow>, IngestError> {
    let mut rdr = csv_reader(reader);
    let cols = Columns::new(&mut rdr, path)?;
    let c = [
        cols.require("date")?,
        cols.require("stock_id")?,
        cols.require("underlying")?,
        cols.require("rate")?,
        cols.require("expiry")?,
        cols.require("strike")?,
        cols.require("type")?,
        cols.require("mid")?,
    ];
    read_rows(&mut rdr, path, |rec| {
        let date = parse_date(field(rec, c[0], "date")?)?;
        let underlying = parse_f64(field(rec, c[2], "underlying")?, "underlying")?;
        let expiry = parse_date(field(rec, c[4], "expiry")?)?;
        let strike = parse_f64(field(rec, c[5], "strike")?, "strike")?;
        let mid = parse_f64(field(rec, c[7], "mid")?, "mid")?;
        if underlying <= 0.0 {
            return Err(format!("non-positive underlying {underlying}"));
        }
        if strike <= 0.0 {
            return Err(format!("non-positive strike {strike}"));
        }
        if mid < 0.0 {
            return Err(format!("negative mid {mid}"));
        }
        if expiry <= date {
            return Err(format!("expiry {expiry} not after observation date {date}"));
        }
        Ok(OptionRow {
            date,
            stock_id: field(rec, c[1], "stock_id")?.to_string(),
            underlying,
            rate: parse_f64(field(rec, c[3], "rate")?, "rate")?,
            quote: OptionQuote {
                strike,
                expiry,
                kind: field(rec, c[6], "type")?
                    .parse()
                    .map_err(|e: DataError| e.to_string())?,
                mid,
            },
        })
    })
}

/// One snapshot per (stock, date), sorted by stock then date. Underlying and
/// rate are taken from the first row of each group.
pub fn group_chains(rows: &[OptionRow]) -> Vec<OptionChainSnapshot> {
    let mut groups: BTreeMap<(String, NaiveDate), OptionChainSnapshot> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.stock_id.clone(), r.date))
            .or_insert_with(|| OptionChainSnapshot {
                stock_id: r.stock_id.clone(),
                date: r.date,
                underlying: r.underlying,
                rate: r.rate,
                quotes: Vec::new(),
            })
            .quotes
            .push(r.quote);
    }
    groups.into_values().collect()
}

pub fn write_options<W: Write>(w: W, chains: &[OptionChainSnapshot]) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "date",
        "stock_id",
        "underlying",
        "rate",
        "expiry",
        "strike",
        "type",
        "mid",
    ])
    .map_err(csv_io)?;
    for ch in chains {
        for q in &ch.quotes {
            wtr.write_record([
                ch.date.to_string(),
                ch.stock_id.clone(),
                format!("{:.6}", ch.underlying),
                format!("{:.6}", ch.rate),
                q.expiry.to_string(),
                format!("{:.6}", q.strike),
                q.kind.code().to_string(),
                format!("{:.8}", q.mid),
            ])
            .map_err(csv_io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorRow {
    pub date: NaiveDate,
    pub name: String,
    pub value: f64,
}

pub fn load_factors(path: &Path) -> Result<Ingested<FactorRow>, IngestError> {
    read_factors(open(path)?, &path.display().to_string())
}

pub fn read_factors<R: Read>(reader: R, path: &str) -> Result<Ingested<FactorRow>, IngestError> {
    let mut rdr = csv_reader(reader);
    let cols = Columns::new(&mut rdr, path)?;
    let (date, name, value) = (cols.require("date")?, cols.require("name")?, cols.require("value")?);
    read_rows(&mut rdr, path, |rec| {
        Ok(FactorRow {
            date: parse_date(field(rec, date, "date")?)?,
            name: field(rec, name, "name")?.to_string(),
            value: parse_f64(field(rec, value, "value")?, "value")?,
        })
    })
}

pub fn group_factors(rows: &[FactorRow]) -> BTreeMap<String, FactorSeries> {
    let mut out: BTreeMap<String, FactorSeries> = BTreeMap::new();
    for r in rows {
        out.entry(r.name.clone())
            .or_insert_with(|| FactorSeries {
                name: r.name.clone(),
                values: BTreeMap::new(),
            })
            .values
            .insert(r.date, r.value);
    }
    out
}

/// Externally produced classifier output: `post_id, label` with `abstain` allowed.
pub fn load_predictions(path: &Path) -> Result<Ingested<(String, Option<Polarity>)>, IngestError> {
    read_predictions(open(path)?, &path.display().to_string())
}

pub fn read_predictions<R: Read>(reader: R, path: &str) -> Result<Ingested<(String, Option<Polarity>)>, IngestError> {
    let mut rdr = csv_reader(reader);
    let cols = Columns::new(&mut rdr, path)?;
    let (id, label) = (cols.require("post_id")?, cols.require("label")?);
    read_rows(&mut rdr, path, |rec| {
        let l = field(rec, label, "label")?;
        let pred = if l == "abstain" {
            None
        } else {
            Some(l.parse::<Polarity>().map_err(|e| e.to_string())?)
        };
        Ok((field(rec, id, "post_id")?.to_string(), pred))
    })
}

/// Gold labels: `post_id, label`, abstention not allowed.
pub fn load_gold(path: &Path) -> Result<Ingested<(String, Polarity)>, IngestError> {
    let preds = load_predictions(path)?;
    let mut out = Ingested {
        records: Vec::with_capacity(preds.records.len()),
        errors: preds.errors,
    };
    for (id, label) in preds.records {
        match label {
            Some(l) => out.records.push((id, l)),
            None => out.errors.push(RowError {
                line: 0,
                message: format!("gold label for {id} cannot be `abstain`"),
            }),
        }
    }
    Ok(out)
}
