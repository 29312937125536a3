use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, FixedOffset, NaiveDate, TimeZone, Timelike, Weekday};
use proptest::prelude::*;

use trisent::config::PipelineConfig;
use trisent::experiment::{run_grid, Period, PredictorSet};
use trisent::forecast::ModelKind;
use trisent::indices::{build_all, IndexSet};
use trisent::market::{LabeledPost, MarketClock, Polarity, TradingCalendar};
use trisent::synth::{generate_synthetic, SynthSpec};
use trisent::textual::{bsi_series, daily_polarity_counts};

fn calendar(holidays: &[u32]) -> TradingCalendar {
    let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    let dates = (0..40)
        .map(|i| start + Duration::days(i))
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) && !holidays.contains(&d.ordinal()))
        .collect();
    TradingCalendar::with_clock(dates, MarketClock::default()).unwrap()
}

fn post(i: usize, ts: DateTime<FixedOffset>, label: Polarity, spam: bool) -> LabeledPost {
    LabeledPost {
        post_id: format!("p{i}"),
        stock_id: "A".into(),
        timestamp: ts,
        votes: vec![],
        label: Some(label),
        spam,
    }
}

// Trading day a post counts toward: its own local date when that is a
// trading day and the post precedes 16:00 local time, else the next one.
fn oracle_day(cal: &TradingCalendar, ts: &DateTime<FixedOffset>) -> Option<NaiveDate> {
    let local = ts.with_timezone(&FixedOffset::east_opt(8 * 3600).unwrap());
    let d = local.date_naive();
    if d < cal.first() {
        return None;
    }
    if local.hour() < 16 && cal.dates().contains(&d) {
        return Some(d);
    }
    cal.dates().iter().copied().find(|c| *c > d)
}

proptest! {
    #[test]
    fn bsi_matches_date_oracle(
        raw in prop::collection::vec((0i64..40 * 24 * 60, 0usize..3, any::<bool>(), -12i32..13), 1..200),
        holidays in prop::collection::vec(1u32..40, 0..4),
        include_spam in any::<bool>(),
    ) {
        let cal = calendar(&holidays);
        let base = FixedOffset::east_opt(0).unwrap().with_ymd_and_hms(2017, 12, 31, 12, 0, 0).unwrap();
        let posts: Vec<LabeledPost> = raw
            .iter()
            .enumerate()
            .map(|(i, &(minute, l, spam, tz))| {
                let ts = (base + Duration::minutes(minute)).with_timezone(&FixedOffset::east_opt(tz * 3600).unwrap());
                post(i, ts, Polarity::ALL[l], spam)
            })
            .collect();

        let mut want: BTreeMap<NaiveDate, [i64; 3]> = BTreeMap::new();
        for p in posts.iter().filter(|p| include_spam || !p.spam) {
            if let Some(d) = oracle_day(&cal, &p.timestamp) {
                want.entry(d).or_default()[p.label.unwrap().index()] += 1;
            }
        }
        let (counts, _) = daily_polarity_counts(&posts, "A", &cal, include_spam);
        let series = bsi_series("A", &counts);
        for d in cal.dates() {
            let expected = want.get(d).map(|c| (c[0] - c[2]) as f64 / (c[0] + c[1] + c[2]) as f64);
            prop_assert_eq!(series.values.get(d).copied().flatten(), expected, "date {}", d);
        }
    }
}

#[test]
fn no_model_beats_zero_without_signal() {
    let spec = SynthSpec {
        seed: 31,
        days: 500,
        beta_nl: 0.0,
        control_loading: 0.0,
        posts_per_day: 10,
        strikes_per_expiry: 16,
        ..Default::default()
    };
    let syn = generate_synthetic(&spec).unwrap();
    let mut cfg = PipelineConfig {
        seed: Some(3),
        ..Default::default()
    };
    cfg.models.predictor_sets = vec![PredictorSet::Mixture, PredictorSet::NoSi];
    cfg.models.kinds = vec![ModelKind::Var, ModelKind::Zero];
    let panels: Vec<_> = build_all(&syn.dataset, &cfg, IndexSet::ALL)
        .unwrap()
        .into_iter()
        .map(|b| b.1)
        .collect();
    let grid = run_grid(&panels, &cfg.grid_spec());
    assert!(grid.failures.is_empty());
    let mean = |model| {
        let v: Vec<f64> = grid
            .reports
            .iter()
            .filter(|r| r.key.model == model && r.key.period != Period::Full)
            .map(|r| r.mse_test)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (var, zero) = (mean(ModelKind::Var), mean(ModelKind::Zero));
    assert!(var > 0.95 * zero, "VAR {var} vs zero {zero}");
}
