//! Seeded synthetic market with planted sentiment structure. Every latent
//! driver is returned alongside the observable files so each stage can be
//! checked against ground truth.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Duration, FixedOffset, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::market::{
    FactorSeries, LabeledPost, MarketClock, OptionChainSnapshot, Polarity, PriceSeries, TradingCalendar,
};
use crate::pricing::{price_chain, strike_grid, Smile};
use crate::seed;

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] crate::market::ingest::IngestError),
}

/// Market-wide control factors, in panel order.
pub const CONTROLS: [&str; 8] = ["r1", "r3_minus_r1", "inf", "umd", "hkd", "rm_minus_r1", "smb", "hml"];

/// Stock-level market characteristics; `{stock}` is replaced by the stock id.
pub const CHARACTERISTICS: [&str; 4] = [
    "turnover_{stock}",
    "adv_decline_{stock}",
    "rel_strength_{stock}",
    "short_ratio_{stock}",
];

const CONTROL_PATTERN: [f64; 8] = [0.3, -0.2, 0.1, 0.2, 0.0, -0.1, 0.15, -0.15];
// (level, scale, loading on the latent market sentiment)
const CHARACTERISTIC_SHAPE: [(f64, f64, f64); 4] =
    [(1.0, 0.2, 0.9), (1.0, 0.1, 0.7), (50.0, 5.0, 0.8), (0.1, 0.01, -0.6)];

/// Keys of the `synth` config file with their meaning.
pub const SYNTH_KEYS: &[(&str, &str)] = &[
    ("seed", "generator seed"),
    ("start", "first trading day, YYYY-MM-DD"),
    ("days", "number of weekday trading days"),
    ("stocks", "stock ids"),
    ("beta_lin", "linear loading of next-day return on the latent sentiment"),
    ("beta_nl", "loading on tanh(gamma * sentiment)"),
    ("gamma", "steepness of the nonlinear term"),
    ("noise_std", "return noise, in units of return_scale"),
    ("return_scale", "daily return per unit of the return equation"),
    ("control_loading", "multiplier on the control-factor loadings"),
    (
        "regimes",
        "per-calendar-year multiplier on the sentiment terms; the last entry repeats",
    ),
    ("persistence", "AR(1) coefficient of each latent sentiment component"),
    ("posts_per_day", "labeled posts per stock and day"),
    ("spam_per_day", "spam posts per stock and day"),
    ("neutral_share", "share of neutral posts"),
    (
        "vote_noise",
        "probability that one annotator vote disagrees with the true label",
    ),
    ("bsi_amplitude", "BSI target per unit of latent textual sentiment"),
    (
        "constant_bsi",
        "fixed BSI target on every day; null follows the latent path",
    ),
    ("base_vol", "at-the-money implied volatility"),
    ("smile_slope", "baseline slope of the implied volatility smile"),
    (
        "smile_sensitivity",
        "smile slope change per unit of latent option sentiment",
    ),
    ("smile_curvature", "smile curvature"),
    ("rate", "risk-free rate"),
    ("expiries", "days to expiry of the listed option series"),
    ("strikes_per_expiry", "strikes per expiry"),
    ("factor_noise", "idiosyncratic noise of the market characteristics"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub start: NaiveDate,
    /// Trading days (weekdays from `start`).
    pub days: usize,
    pub stocks: Vec<String>,
    pub beta_lin: f64,
    pub beta_nl: f64,
    pub gamma: f64,
    pub noise_std: f64,
    /// Daily return units per unit of the standardized return equation.
    pub return_scale: f64,
    /// Multiplier on the control-factor loadings.
    pub control_loading: f64,
    /// Per-calendar-year multiplier on the sentiment terms; the last entry repeats.
    pub regimes: Vec<f64>,
    /// AR(1) coefficient of each latent sentiment component.
    pub persistence: f64,
    pub posts_per_day: usize,
    pub spam_per_day: usize,
    pub neutral_share: f64,
    /// Probability that a single annotator vote disagrees with the true label.
    pub vote_noise: f64,
    pub bsi_amplitude: f64,
    /// Overrides the latent BSI path with a constant target.
    pub constant_bsi: Option<f64>,
    pub base_vol: f64,
    pub smile_slope: f64,
    /// Smile slope change per unit of latent option sentiment.
    pub smile_sensitivity: f64,
    pub smile_curvature: f64,
    pub rate: f64,
    pub expiries: Vec<i64>,
    pub strikes_per_expiry: usize,
    pub factor_noise: f64,
}

impl SynthSpec {
    /// Digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::output::sha256_hex(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }

    pub fn header(&self) -> String {
        crate::output::header_line(&self.hash(), self.seed)
    }
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            start: NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(),
            days: 750,
            stocks: vec!["0700".into(), "0005".into()],
            beta_lin: 0.0,
            beta_nl: 1.0,
            gamma: 2.5,
            noise_std: 0.3,
            return_scale: 0.005,
            control_loading: 1.0,
            regimes: vec![1.0],
            persistence: 0.5,
            posts_per_day: 40,
            spam_per_day: 2,
            neutral_share: 0.3,
            vote_noise: 0.1,
            bsi_amplitude: 0.8,
            constant_bsi: None,
            base_vol: 0.25,
            smile_slope: -0.1,
            smile_sensitivity: 0.04,
            smile_curvature: 0.02,
            rate: 0.02,
            expiries: vec![30, 60],
            strikes_per_expiry: 30,
            factor_noise: 0.3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.days < 100 {
            return bad(format!("days must be at least 100, got {}", self.days));
        }
        if !(self.noise_std > 0.0) {
            return bad("noise_std must be positive".into());
        }
        if self.stocks.is_empty() {
            return bad("at least one stock is required".into());
        }
        if self.posts_per_day == 0 {
            return bad("posts_per_day must be positive".into());
        }
        if !(0.0..1.0).contains(&self.neutral_share) || !(0.0..=1.0).contains(&self.vote_noise) {
            return bad("neutral_share must be in [0, 1) and vote_noise in [0, 1]".into());
        }
        if !(self.persistence.abs() < 1.0) {
            return bad("persistence must be inside (-1, 1)".into());
        }
        if !(self.base_vol > 0.0) || self.expiries.iter().any(|d| *d <= 0) || self.strikes_per_expiry < 2 {
            return bad("option grid needs positive vol, positive expiries and at least 2 strikes".into());
        }
        if let Some(b) = self.constant_bsi {
            if !(-1.0..=1.0).contains(&b) {
                return bad(format!("constant_bsi {b} outside [-1, 1]"));
            }
        }
        if self.regimes.is_empty() {
            return bad("regimes must have at least one entry".into());
        }
        Ok(())
    }

    fn regime(&self, year_index: usize) -> f64 {
        self.regimes[year_index.min(self.regimes.len() - 1)]
    }
}

/// Latent drivers for one stock and date.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRow {
    pub date: NaiveDate,
    pub stock_id: String,
    pub s_bsi: f64,
    pub s_osi: f64,
    pub s_msi: f64,
    /// Combined signal `(s_bsi + s_osi + s_msi) / sqrt(3)`.
    pub s: f64,
    pub bsi_target: f64,
    pub regime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub spec: SynthSpec,
    pub dataset: Dataset,
    pub truth: Vec<TruthRow>,
}

/// Counts `(pos, neu, neg)` summing to `n` whose BSI is the multiple of
/// `1/n` nearest to `target`. The neutral count moves by one from
/// `n * neutral_share` when needed to make that BSI reachable.
pub fn realize_counts(target: f64, n: usize, neutral_share: f64) -> (u32, u32, u32) {
    let n_i = n as i64;
    let mut neu = ((n as f64 * neutral_share).round() as i64).min(n_i);
    let d = (target.clamp(-1.0, 1.0) * n as f64).round() as i64;
    if d.abs() > n_i - neu {
        neu = n_i - d.abs();
    } else if (n_i - neu - d).rem_euclid(2) != 0 {
        // pos - neg and pos + neg must have the same parity
        neu = if d.abs() < n_i - neu { neu + 1 } else { neu - 1 };
    }
    let m = n_i - neu;
    let pos = (m + d) / 2;
    (pos as u32, neu as u32, (m - pos) as u32)
}

fn round_dp(x: f64, dp: i32) -> f64 {
    let s = 10f64.powi(dp);
    (x * s).round() / s
}

fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Stationary AR(1) with unit marginal variance.
fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut x = gauss(rng);
    (0..n)
        .map(|i| {
            if i > 0 {
                x = phi * x + innov * gauss(rng);
            }
            x
        })
        .collect()
}

fn close_at(date: NaiveDate, clock: MarketClock) -> DateTime<FixedOffset> {
    date.and_time(clock.close)
        .and_local_timezone(clock.utc_offset)
        .single()
        .expect("fixed offsets are unambiguous")
}

pub fn characteristic_names(stock: &str) -> Vec<String> {
    CHARACTERISTICS.iter().map(|c| c.replace("{stock}", stock)).collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Synthetic, SynthError> {
    spec.validate()?;
    let clock = MarketClock::default();
    let dates = weekdays(spec.start, spec.days);
    let calendar = TradingCalendar::with_clock(dates.clone(), clock).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let first_year = dates[0].year();
    let n = dates.len();

    let mut ctrl_rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, "controls"));
    let controls: Vec<Vec<f64>> = CONTROLS.iter().map(|_| ar1(&mut ctrl_rng, n, 0.2)).collect();
    let mut factors: BTreeMap<String, FactorSeries> = BTreeMap::new();
    for (k, name) in CONTROLS.iter().enumerate() {
        let values = dates
            .iter()
            .zip(&controls[k])
            .map(|(d, x)| (*d, 0.01 + 0.002 * x))
            .collect();
        factors.insert(
            name.to_string(),
            FactorSeries {
                name: name.to_string(),
                values,
            },
        );
    }

    let mut prices = BTreeMap::new();
    let mut posts = Vec::new();
    let mut chains = Vec::new();
    let mut truth = Vec::new();

    for stock in &spec.stocks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &format!("latent/{stock}")));
        let sb = ar1(&mut rng, n, spec.persistence);
        let so = ar1(&mut rng, n, spec.persistence);
        let sm = ar1(&mut rng, n, spec.persistence);
        let s: Vec<f64> = (0..n).map(|t| (sb[t] + so[t] + sm[t]) / 3f64.sqrt()).collect();

        let mut series = PriceSeries::new(stock.clone());
        let mut price = 100.0;
        for t in 0..n {
            let regime = spec.regime((dates[t].year() - first_year) as usize);
            if t > 0 {
                let sentiment = spec.beta_lin * s[t - 1] + spec.beta_nl * (spec.gamma * s[t - 1]).tanh();
                let ctrl: f64 = CONTROL_PATTERN.iter().zip(&controls).map(|(c, x)| c * x[t - 1]).sum();
                let z = regime * sentiment + spec.control_loading * ctrl + spec.noise_std * gauss(&mut rng);
                price *= (spec.return_scale * z).exp();
            }
            series
                .insert(dates[t], price)
                .map_err(|e| SynthError::Invalid(e.to_string()))?;
            truth.push(TruthRow {
                date: dates[t],
                stock_id: stock.clone(),
                s_bsi: sb[t],
                s_osi: so[t],
                s_msi: sm[t],
                s: s[t],
                bsi_target: spec.constant_bsi.unwrap_or(spec.bsi_amplitude * sb[t].tanh()),
                regime,
            });
        }

        let mut post_rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &format!("posts/{stock}")));
        for t in 0..n {
            let close = close_at(dates[t], clock);
            let open = if t == 0 {
                dates[0]
                    .and_hms_opt(0, 0, 0)
                    .unwrap()
                    .and_local_timezone(clock.utc_offset)
                    .single()
                    .expect("fixed offsets are unambiguous")
            } else {
                close_at(dates[t - 1], clock)
            };
            let span = (close - open).num_seconds();
            let target = spec.constant_bsi.unwrap_or(spec.bsi_amplitude * sb[t].tanh());
            let (pos, neu, neg) = realize_counts(target, spec.posts_per_day, spec.neutral_share);
            let mut labels: Vec<(Polarity, bool)> = std::iter::repeat_n((Polarity::Positive, false), pos as usize)
                .chain(std::iter::repeat_n((Polarity::Neutral, false), neu as usize))
                .chain(std::iter::repeat_n((Polarity::Negative, false), neg as usize))
                .chain(std::iter::repeat_n((Polarity::Positive, true), spec.spam_per_day))
                .collect();
            labels.shuffle(&mut post_rng);
            let mut offsets: Vec<i64> = labels.iter().map(|_| post_rng.random_range(0..span)).collect();
            offsets.sort();
            for (k, ((label, spam), off)) in labels.into_iter().zip(offsets).enumerate() {
                let votes = (0..3)
                    .map(|_| {
                        if post_rng.random_bool(spec.vote_noise) {
                            let others: Vec<Polarity> = Polarity::ALL.into_iter().filter(|p| *p != label).collect();
                            others[post_rng.random_range(0..others.len())]
                        } else {
                            label
                        }
                    })
                    .collect();
                posts.push(LabeledPost {
                    post_id: format!("{stock}-{t:05}-{k:03}"),
                    stock_id: stock.clone(),
                    timestamp: open + Duration::seconds(off),
                    votes,
                    label: Some(label),
                    spam,
                });
            }
        }

        for t in 0..n {
            let spot = round_dp(series.closes[&dates[t]], 6);
            let smile = Smile {
                base_vol: spec.base_vol,
                slope: spec.smile_slope + spec.smile_sensitivity * so[t],
                curvature: spec.smile_curvature,
            };
            let mut snapshot = OptionChainSnapshot {
                stock_id: stock.clone(),
                date: dates[t],
                underlying: spot,
                rate: spec.rate,
                quotes: Vec::new(),
            };
            for &days in &spec.expiries {
                let tau = days as f64 / 365.0;
                let strikes: Vec<f64> = strike_grid(spot, spec.base_vol, tau, 4.0, spec.strikes_per_expiry)
                    .into_iter()
                    .map(|k| round_dp(k, 6))
                    .collect();
                let chain = price_chain(stock, dates[t], spot, spec.rate, days, &strikes, smile);
                snapshot.quotes.extend(chain.quotes.into_iter().map(|mut q| {
                    q.mid = round_dp(q.mid, 8);
                    q
                }));
            }
            chains.push(snapshot);
        }

        let names = characteristic_names(stock);
        let mut fac_rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &format!("factors/{stock}")));
        for (name, (level, scale, loading)) in names.iter().zip(CHARACTERISTIC_SHAPE) {
            let values = (0..n)
                .map(|t| {
                    (
                        dates[t],
                        level + scale * (loading * sm[t] + spec.factor_noise * gauss(&mut fac_rng)),
                    )
                })
                .collect();
            factors.insert(
                name.clone(),
                FactorSeries {
                    name: name.clone(),
                    values,
                },
            );
        }
        prices.insert(stock.clone(), series);
    }
    chains.sort_by(|a, b| (&a.stock_id, a.date).cmp(&(&b.stock_id, b.date)));
    posts.sort_by(|a, b| (&a.stock_id, a.timestamp, &a.post_id).cmp(&(&b.stock_id, b.timestamp, &b.post_id)));

    Ok(Synthetic {
        spec: spec.clone(),
        dataset: Dataset {
            calendar,
            posts,
            prices,
            chains,
            factors,
        },
        truth,
    })
}

/// Recorded next to the generated files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub config_sha256: String,
    pub spec: SynthSpec,
    pub characteristics: Vec<String>,
    pub controls: Vec<String>,
    pub anchor: String,
    pub files: BTreeMap<String, String>,
    pub n_posts: usize,
    pub n_chains: usize,
}

impl Synthetic {
    /// Writes the dataset, the latent truth and a manifest with file digests.
    pub fn write(&self, dir: &Path, config_sha256: &str) -> Result<Vec<PathBuf>, SynthError> {
        let header = crate::output::header_line(config_sha256, self.spec.seed);
        let mut written = self.dataset.write(dir, &header)?;
        let truth_path = dir.join("truth.csv");
        let mut w = std::io::BufWriter::new(std::fs::File::create(&truth_path)?);
        writeln!(w, "{header}")?;
        writeln!(w, "date,stock_id,s_bsi,s_osi,s_msi,s,bsi_target,regime")?;
        for r in &self.truth {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.date, r.stock_id, r.s_bsi, r.s_osi, r.s_msi, r.s, r.bsi_target, r.regime
            )?;
        }
        w.flush()?;
        drop(w);
        written.push(truth_path);

        let mut files = BTreeMap::new();
        for p in &written {
            let bytes = std::fs::read(p)?;
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            files.insert(name, crate::output::sha256_hex(&bytes));
        }
        let manifest = SynthManifest {
            seed: self.spec.seed,
            config_sha256: config_sha256.to_string(),
            spec: self.spec.clone(),
            characteristics: CHARACTERISTICS.iter().map(|s| s.to_string()).collect(),
            controls: CONTROLS.iter().map(|s| s.to_string()).collect(),
            anchor: CHARACTERISTICS[0].to_string(),
            files,
            n_posts: self.dataset.posts.len(),
            n_chains: self.dataset.chains.len(),
        };
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest).map_err(|e| SynthError::Invalid(e.to_string()))?;
        std::fs::write(&path, format!("{header}\n{body}\n"))?;
        written.push(path);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textual::{bsi_series, daily_polarity_counts};

    fn small(days: usize) -> SynthSpec {
        SynthSpec {
            days,
            stocks: vec!["A".into()],
            posts_per_day: 10,
            strikes_per_expiry: 12,
            ..Default::default()
        }
    }

    #[test]
    fn every_spec_key_documented() {
        let v = serde_json::to_value(SynthSpec::default()).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut documented: Vec<&str> = SYNTH_KEYS.iter().map(|(k, _)| *k).collect();
        documented.sort();
        let mut keys: Vec<&str> = keys.iter().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(keys, documented);
    }

    #[test]
    fn counts_realize_targets() {
        assert_eq!(realize_counts(0.25, 4, 0.3), (2, 1, 1));
        assert_eq!(realize_counts(0.0, 10, 0.3), (3, 4, 3));
        assert_eq!(realize_counts(1.0, 10, 0.0), (10, 0, 0));
        assert_eq!(realize_counts(-2.0, 5, 0.2), (0, 0, 5));
        for n in 1..30usize {
            for i in -20..=20 {
                let target = i as f64 / 20.0;
                let (p, u, g) = realize_counts(target, n, 0.3);
                assert_eq!((p + u + g) as usize, n);
                let bsi = (p as f64 - g as f64) / n as f64;
                let exact = (target * n as f64).round() / n as f64;
                assert!((bsi - exact).abs() < 1e-12, "n={n} target={target}");
            }
        }
    }

    #[test]
    fn constant_bsi_is_recovered_exactly() {
        let spec = SynthSpec {
            constant_bsi: Some(0.25),
            posts_per_day: 4,
            ..small(120)
        };
        let syn = generate_synthetic(&spec).unwrap();
        let (counts, diag) = daily_polarity_counts(&syn.dataset.posts, "A", &syn.dataset.calendar, false);
        assert_eq!(diag.counted, 4 * 120);
        let bsi = bsi_series("A", &counts);
        assert!(bsi.values.values().all(|v| *v == Some(0.25)));
    }

    #[test]
    fn spec_validation() {
        assert!(generate_synthetic(&SynthSpec {
            days: 99,
            ..Default::default()
        })
        .is_err());
        assert!(generate_synthetic(&SynthSpec {
            noise_std: 0.0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&small(150)).unwrap();
        let b = generate_synthetic(&small(150)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthSpec { seed: 8, ..small(150) }).unwrap();
        assert_ne!(a.dataset.prices, c.dataset.prices);
    }

    #[test]
    fn posts_fall_on_their_day() {
        let syn = generate_synthetic(&small(120)).unwrap();
        let cal = &syn.dataset.calendar;
        let (counts, _) = daily_polarity_counts(&syn.dataset.posts, "A", cal, false);
        assert!(counts.iter().all(|c| c.total() == 10));
        let (with_spam, _) = daily_polarity_counts(&syn.dataset.posts, "A", cal, true);
        assert!(with_spam.iter().all(|c| c.total() == 12));
    }

    #[test]
    fn write_then_load_is_lossless() {
        let syn = generate_synthetic(&small(110)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        syn.write(dir.path(), "0123").unwrap();
        let (back, report) = Dataset::load(
            &crate::dataset::DataPaths::in_dir(dir.path()),
            MarketClock::default(),
            crate::dataset::Needs::ALL,
        )
        .unwrap();
        assert_eq!(report.total(), 0);
        assert_eq!(back, syn.dataset);
    }
}
