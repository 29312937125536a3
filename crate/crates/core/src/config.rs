//! Pipeline configuration: one JSON document, every key documented.

use std::path::{Path, PathBuf};

use chrono::{FixedOffset, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DataPaths;
use crate::experiment::{GridSpec, PredictorSet, ZeroSpace};
use crate::forecast::{LstmConfig, ModelKind};
use crate::market::MarketClock;
use crate::options::OsiConfig;
use crate::panel::FillPolicy;
use crate::synth::{CHARACTERISTICS, CONTROLS};

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    /// Local close time, `HH:MM`.
    pub close: String,
    /// UTC offset of the market, `+HH:MM`.
    pub utc_offset: String,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            close: "16:00".into(),
            utc_offset: "+08:00".into(),
        }
    }
}

impl MarketConfig {
    pub fn clock(&self) -> Result<MarketClock, String> {
        let close = NaiveTime::parse_from_str(&self.close, "%H:%M")
            .map_err(|e| format!("market.close `{}`: {e}", self.close))?;
        let utc_offset: FixedOffset = self
            .utc_offset
            .parse()
            .map_err(|e| format!("market.utc_offset `{}`: {e}", self.utc_offset))?;
        Ok(MarketClock { close, utc_offset })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsiConfig {
    pub include_spam: bool,
    /// When set, labels come from annotator votes with this many agreeing.
    pub min_agreement: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsiConfig {
    /// Factor names; `{stock}` is replaced by each stock id.
    pub factors: Vec<String>,
    /// Factor whose loading is kept positive; prefix `-` for negative.
    pub anchor: String,
}

impl Default for MsiConfig {
    fn default() -> Self {
        MsiConfig {
            factors: CHARACTERISTICS.iter().map(|s| s.to_string()).collect(),
            anchor: CHARACTERISTICS[0].to_string(),
        }
    }
}

impl MsiConfig {
    pub fn factors_for(&self, stock: &str) -> Vec<String> {
        self.factors.iter().map(|f| f.replace("{stock}", stock)).collect()
    }

    pub fn anchor_for(&self, stock: &str) -> crate::pca::Anchor {
        self.anchor
            .replace("{stock}", stock)
            .parse()
            .expect("anchor parsing is infallible")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelConfig {
    pub fill: FillPolicy,
    pub lag: usize,
    pub split_ratio: f64,
    /// Fit normalization and MSI on all dates instead of training dates.
    pub normalize_whole_sample: bool,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            fill: FillPolicy::default(),
            lag: 2,
            split_ratio: 0.8,
            normalize_whole_sample: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub kinds: Vec<ModelKind>,
    pub predictor_sets: Vec<PredictorSet>,
    pub lstm: LstmConfig,
    pub zero_space: ZeroSpace,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            kinds: ModelKind::ALL.to_vec(),
            predictor_sets: PredictorSet::ALL.to_vec(),
            lstm: LstmConfig::default(),
            zero_space: ZeroSpace::Raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub data: DataPaths,
    pub market: MarketConfig,
    pub stocks: Vec<String>,
    pub years: Vec<i32>,
    pub bsi: BsiConfig,
    pub osi: OsiConfig,
    pub msi: MsiConfig,
    pub controls: Vec<String>,
    pub panel: PanelConfig,
    pub models: ModelsConfig,
    pub jobs: usize,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: None,
            data: DataPaths::default(),
            market: MarketConfig::default(),
            stocks: Vec::new(),
            years: Vec::new(),
            bsi: BsiConfig::default(),
            osi: OsiConfig::default(),
            msi: MsiConfig::default(),
            controls: CONTROLS.iter().map(|s| s.to_string()).collect(),
            panel: PanelConfig::default(),
            models: ModelsConfig::default(),
            jobs: 0,
            out: "out".into(),
        }
    }
}

/// Every configuration key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("seed", "experiment seed (required; all randomness derives from it)"),
    ("data.dir", "base directory for relative data paths"),
    ("data.calendar", "trading calendar CSV (date)"),
    (
        "data.posts",
        "posts CSV or JSONL (post_id, stock_id, timestamp, votes, label, spam)",
    ),
    ("data.prices", "prices CSV (date, stock_id, close)"),
    (
        "data.options",
        "option quotes CSV (date, stock_id, underlying, rate, expiry, strike, type, mid)",
    ),
    ("data.factors", "factor CSV in long format (date, name, value)"),
    (
        "market.close",
        "local market close, HH:MM; posts at or after it count for the next trading day",
    ),
    ("market.utc_offset", "market UTC offset, +HH:MM"),
    (
        "stocks",
        "stock ids to process; empty means every stock in the prices file",
    ),
    (
        "years",
        "calendar years for experiment cells; empty means all years plus the full period",
    ),
    ("bsi.include_spam", "count posts flagged as spam"),
    (
        "bsi.min_agreement",
        "derive labels from annotator votes needing this many agreeing votes; null uses the label column",
    ),
    (
        "osi.target_horizon_days",
        "preferred days to expiry for the skewness estimate",
    ),
    ("osi.min_days", "shortest eligible days to expiry"),
    ("osi.max_days", "longest eligible days to expiry"),
    ("osi.min_quotes_per_side", "minimum out-of-the-money calls and puts"),
    (
        "msi.factors",
        "market characteristics for the principal component; {stock} expands to the stock id",
    ),
    (
        "msi.anchor",
        "factor whose loading is kept positive; prefix - for negative",
    ),
    ("controls", "control factor names, in panel order"),
    (
        "panel.fill",
        "missing-value policy: {\"forward_fill\": {\"max_gap\": n}} or \"drop_row\"",
    ),
    ("panel.lag", "look-back length of every model"),
    ("panel.split_ratio", "training share of each year's dates"),
    (
        "panel.normalize_whole_sample",
        "fit normalization and MSI on all dates rather than training dates",
    ),
    ("models.kinds", "models to run: LSTM, VAR, Zero"),
    ("models.predictor_sets", "predictor sets: BSI, OSI, MSI, Mixture, NoSI"),
    ("models.lstm.layers", "stacked LSTM layers"),
    ("models.lstm.epochs", "training epochs"),
    (
        "models.lstm.hidden",
        "hidden size; null means lag times the number of panel columns",
    ),
    ("models.lstm.lag", "ignored; panel.lag is used"),
    ("models.lstm.learning_rate", "optimizer step size"),
    (
        "models.lstm.seed",
        "ignored; each cell derives its seed from the experiment seed",
    ),
    ("models.lstm.optimizer", "gd or adam"),
    (
        "models.lstm.batch_size",
        "mini-batch size; null trains on the full batch",
    ),
    ("models.lstm.weight_decay", "L2 penalty on LSTM weights"),
    (
        "models.zero_space",
        "zero baseline predicts 0 in raw return space (raw) or normalized space (normalized)",
    ),
    ("jobs", "worker threads; 0 uses all cores (results do not depend on it)"),
    ("out", "output directory"),
];

impl PipelineConfig {
    /// Parses JSON; leading `#` lines (output headers) are skipped.
    pub fn from_json_str(s: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(crate::output::strip_header(s)).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a config file; relative data paths resolve against its directory
    /// unless `data.dir` is set.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json_str(&text, path)?;
        if cfg.data.dir.is_none() {
            cfg.data.dir = path.parent().map(Path::to_path_buf);
        }
        Ok(cfg)
    }

    pub fn clock(&self) -> Result<MarketClock, String> {
        self.market.clock()
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.seed.is_none() {
            problems.push("seed is required (config key `seed` or --seed)".to_string());
        }
        if let Err(e) = self.clock() {
            problems.push(e);
        }
        if self.panel.lag == 0 {
            problems.push("panel.lag must be at least 1".into());
        }
        if !(self.panel.split_ratio > 0.0 && self.panel.split_ratio < 1.0) {
            problems.push(format!(
                "panel.split_ratio must be in (0, 1), got {}",
                self.panel.split_ratio
            ));
        }
        if self.msi.factors.len() < 2 {
            problems.push("msi.factors needs at least 2 entries".into());
        }
        if let Err(e) = self.models.lstm.validate() {
            problems.push(format!("models.lstm: {e}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    /// Lists configured input files that do not exist.
    pub fn missing_files(&self, options: bool, posts: bool, factors: bool) -> Vec<PathBuf> {
        let d = &self.data;
        let mut wanted = vec![d.resolve(&d.calendar), d.resolve(&d.prices)];
        if posts {
            wanted.push(d.resolve(&d.posts));
        }
        if options {
            wanted.push(d.resolve(&d.options));
        }
        if factors {
            wanted.push(d.resolve(&d.factors));
        }
        wanted.into_iter().filter(|p| !p.is_file()).collect()
    }

    /// Digest of the settings that determine results; output location and
    /// thread count are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.jobs = 0;
        c.data.dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        crate::output::sha256_hex(json.as_bytes())
    }

    pub fn header(&self) -> String {
        crate::output::header_line(&self.hash(), self.seed.unwrap_or_default())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            seed: self.seed.unwrap_or_default(),
            lag: self.panel.lag,
            split_ratio: self.panel.split_ratio,
            years: (!self.years.is_empty()).then(|| self.years.clone()),
            include_full: true,
            sets: self.models.predictor_sets.clone(),
            models: self.models.kinds.clone(),
            lstm: LstmConfig {
                lag: self.panel.lag,
                ..self.models.lstm.clone()
            },
            whole_sample: self.panel.normalize_whole_sample,
            zero_space: self.models.zero_space,
            jobs: self.jobs,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
