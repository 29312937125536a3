//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use trisent::config::PipelineConfig;
use trisent::experiment::{run_grid, ForecastReport, Period, PredictorSet};
use trisent::forecast::{fit_var, LstmConfig, LstmModel, ModelKind, Optimizer};
use trisent::indices::{build_all, IndexSet};
use trisent::market::{FactorSeries, Polarity};
use trisent::options::{implied_skewness, OsiConfig};
use trisent::panel::LaggedRow;
use trisent::pca::{correlation_matrix, fit_pca, msi_series, symmetric_eigen, Anchor};
use trisent::pipeline;
use trisent::pricing::{price_chain, strike_grid, Smile};
use trisent::synth::{generate_synthetic, SynthSpec};
use trisent::textual::{micro_metrics, PolarityCounts};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 3, 1).unwrap()
}

// 1. BSI range, antisymmetry and neutral dilution over every triple up to 60.
fn bsi_properties() -> Outcome {
    const MAX: u32 = 60;
    let bsi = |pos, neu, neg| {
        PolarityCounts {
            date: day(),
            pos,
            neu,
            neg,
        }
        .bsi()
    };
    let mut checked = 0u64;
    for pos in 0..=MAX {
        for neu in 0..=MAX {
            for neg in 0..=MAX {
                let Some(b) = bsi(pos, neu, neg) else {
                    if pos + neu + neg != 0 {
                        return outcome(false, format!("missing BSI for ({pos},{neu},{neg})"));
                    }
                    continue;
                };
                if !(-1.0..=1.0).contains(&b) {
                    return outcome(false, format!("BSI {b} out of range at ({pos},{neu},{neg})"));
                }
                if bsi(neg, neu, pos) != Some(-b) {
                    return outcome(false, format!("swap not antisymmetric at ({pos},{neu},{neg})"));
                }
                let diluted = bsi(pos, neu + 1, neg).unwrap();
                if diluted.abs() > b.abs() || diluted * b < 0.0 {
                    return outcome(false, format!("adding a neutral post amplified ({pos},{neu},{neg})"));
                }
                if b != 0.0 && diluted.abs() >= b.abs() {
                    return outcome(
                        false,
                        format!("adding a neutral post did not dilute ({pos},{neu},{neg})"),
                    );
                }
                checked += 1;
            }
        }
    }
    outcome(true, format!("{checked} triples"))
}

// 2. Micro metrics against a confusion matrix built by linear scans.
fn micro_metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..1000 {
        let n = rng.random_range(1..60);
        let gold: Vec<(String, Polarity)> = (0..n)
            .map(|i| (format!("p{i}"), Polarity::ALL[rng.random_range(0..3)]))
            .collect();
        let mut predicted: Vec<(String, Option<Polarity>)> = Vec::new();
        for (id, _) in &gold {
            match rng.random_range(0..10) {
                0 => {} // missing prediction
                1 => predicted.push((id.clone(), None)),
                _ => predicted.push((id.clone(), Some(Polarity::ALL[rng.random_range(0..3)]))),
            }
        }
        predicted.shuffle(&mut rng);

        let mut m = [[0u64; 4]; 3];
        for (id, g) in &gold {
            let p = predicted.iter().find(|(pid, _)| pid == id).and_then(|(_, p)| *p);
            let col = match p {
                Some(Polarity::Positive) => 0,
                Some(Polarity::Neutral) => 1,
                Some(Polarity::Negative) => 2,
                None => 3,
            };
            let row = match g {
                Polarity::Positive => 0,
                Polarity::Neutral => 1,
                Polarity::Negative => 2,
            };
            m[row][col] += 1;
        }
        let tp: u64 = (0..3).map(|i| m[i][i]).sum();
        let fp: u64 = (0..3)
            .map(|j| (0..3).filter(|&i| i != j).map(|i| m[i][j]).sum::<u64>())
            .sum();
        let fn_: u64 = (0..3).map(|i| m[i].iter().sum::<u64>() - m[i][i]).sum();
        let recall = tp as f64 / (tp + fn_) as f64;
        let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let f1 = precision.map(|p| {
            if p + recall > 0.0 {
                2.0 * p * recall / (p + recall)
            } else {
                0.0
            }
        });

        let rep = micro_metrics(&predicted, &gold).unwrap();
        let t = rep.totals();
        if rep.confusion != m
            || (t.tp, t.fp, t.fn_) != (tp, fp, fn_)
            || rep.recall != recall
            || rep.precision != precision
            || rep.f1 != f1
        {
            return outcome(false, format!("trial {trial}: {rep:?} vs oracle {m:?}"));
        }
    }
    outcome(true, "1000 randomized sets")
}

// 3. Risk-neutral skewness of Black-Scholes chains.
fn skewness_of(smile: Smile, strikes: usize) -> f64 {
    let tau_days = 30;
    let tau = tau_days as f64 / 365.0;
    let ks = strike_grid(100.0, 0.2, tau, 4.0, strikes);
    let chain = price_chain("X", day(), 100.0, 0.02, tau_days, &ks, smile);
    implied_skewness(&chain, &OsiConfig::default()).unwrap().skewness
}

fn risk_neutral_skewness() -> Outcome {
    let flat = skewness_of(Smile::flat(0.2), 40);
    let dense = skewness_of(Smile::flat(0.2), 79);
    let steep = skewness_of(
        Smile {
            base_vol: 0.2,
            slope: -0.15,
            curvature: 0.02,
        },
        40,
    );
    let pass = flat.abs() < 0.05 && (flat - dense).abs() < 1e-2 && steep < 0.0;
    outcome(
        pass,
        format!(
            "flat {flat:.5}, dense {dense:.5} (diff {:.2e}), put-steepened {steep:.4}",
            (flat - dense).abs()
        ),
    )
}

// 4. Eigen residual, rank-one panel, scale invariance of the score.
fn pca_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = 6;
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            let z = gauss(&mut rng);
            (0..k).map(|j| (j as f64 + 1.0) * 0.3 * z + gauss(&mut rng)).collect()
        })
        .collect();
    let names: Vec<String> = (0..k).map(|j| format!("f{j}")).collect();
    let model = fit_pca(&names, &rows, &Anchor::positive("f0")).unwrap();
    let c = correlation_matrix(&rows, &model.means, &model.stds);
    let (vals, _) = symmetric_eigen(&c).unwrap();
    let cw: Vec<f64> = c
        .iter()
        .map(|r| r.iter().zip(&model.loadings).map(|(a, b)| a * b).sum())
        .collect();
    let residual = cw
        .iter()
        .zip(&model.loadings)
        .map(|(a, w)| (a - vals[0] * w).powi(2))
        .sum::<f64>()
        .sqrt();

    let two: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let x = gauss(&mut rng);
            vec![x, 3.0 * x - 2.0]
        })
        .collect();
    let rank1 = fit_pca(&names[..2], &two, &Anchor::positive("f0"))
        .unwrap()
        .explained_variance_ratio;

    let dates: Vec<NaiveDate> = (0..rows.len() as i64)
        .map(|i| day() + chrono::Duration::days(i))
        .collect();
    let scales = [2.0, 0.01, 50.0, 1.0, 7.5, 0.3];
    let shifts = [1.0, -3.0, 100.0, 0.0, 0.5, 10.0];
    let factors = |scaled: bool| -> BTreeMap<String, FactorSeries> {
        names
            .iter()
            .enumerate()
            .map(|(j, n)| {
                let values = dates
                    .iter()
                    .zip(&rows)
                    .map(|(d, r)| (*d, if scaled { r[j] * scales[j] + shifts[j] } else { r[j] }))
                    .collect();
                (
                    n.clone(),
                    FactorSeries {
                        name: n.clone(),
                        values,
                    },
                )
            })
            .collect()
    };
    let msi = |f: &BTreeMap<String, FactorSeries>| {
        let m = trisent::pca::fit_pca_on(f, &names, dates.iter().copied(), &Anchor::positive("f0")).unwrap();
        msi_series(&m, f, dates.iter().copied(), "X").unwrap().observed()
    };
    let (a, b) = (msi(&factors(false)), msi(&factors(true)));
    let max_diff = a
        .values()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    let pass = residual < 1e-8 && (rank1 - 1.0).abs() < 1e-8 && max_diff < 1e-8;
    outcome(
        pass,
        format!("residual {residual:.2e}, rank-1 ratio {rank1:.12}, rescaled MSI diff {max_diff:.2e}"),
    )
}

// 5. VAR(2) with N = 12. Regressors come from a simulated stable VAR(2)
// driven by unit shocks; the regressand is its conditional mean, plus
// N(0, sigma^2) noise in the noisy case.
fn var_recovery_error(sigma: f64, t_len: usize, seed: u64) -> f64 {
    let n = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_block = |norm: f64, rng: &mut ChaCha8Rng| {
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| gauss(rng)).collect()).collect();
        let f = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        m.into_iter()
            .map(|r| r.into_iter().map(|v| v * norm / f).collect::<Vec<f64>>())
            .collect::<Vec<_>>()
    };
    let a = [random_block(0.5, &mut rng), random_block(0.3, &mut rng)];
    let c: Vec<f64> = (0..n).map(|_| 0.1 * gauss(&mut rng)).collect();
    let mean = |y1: &[f64], y2: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|m| c[m] + (0..n).map(|j| a[0][m][j] * y1[j] + a[1][m][j] * y2[j]).sum::<f64>())
            .collect()
    };

    let mut ys: Vec<Vec<f64>> = vec![vec![0.0; n], vec![0.0; n]];
    let mut rows = Vec::new();
    for t in 0..t_len + 50 {
        let (y1, y2) = (ys[ys.len() - 1].clone(), ys[ys.len() - 2].clone());
        let mu = mean(&y1, &y2);
        if t >= 50 {
            let current: Vec<f64> = mu.iter().map(|v| v + sigma * gauss(&mut rng)).collect();
            rows.push(LaggedRow {
                date: day(),
                inputs: y1.iter().chain(&y2).copied().collect(),
                target: current[0],
                target_raw: current[0],
                current,
            });
        }
        ys.push(mu.iter().map(|v| v + gauss(&mut rng)).collect());
    }
    let cols: Vec<String> = (0..n).map(|i| format!("y{i}")).collect();
    let model = fit_var(&rows, &cols, 2, 0).unwrap();
    let mut err: f64 = 0.0;
    for m in 0..n {
        err = err.max((model.intercepts[m] - c[m]).abs());
        for s in 0..2 {
            for j in 0..n {
                err = err.max((model.coefficients[s][m][j] - a[s][m][j]).abs());
            }
        }
    }
    err
}

fn var_recovery() -> Outcome {
    let exact = (0..3).map(|s| var_recovery_error(0.0, 500, 50 + s)).fold(0.0, f64::max);
    let noisy = (0..3)
        .map(|s| var_recovery_error(0.01, 500, 60 + s))
        .fold(0.0, f64::max);
    outcome(
        exact < 1e-6 && noisy < 0.05,
        format!("max abs coefficient error: noiseless {exact:.2e}, sigma=0.01 {noisy:.2e}"),
    )
}

// 6. Central finite differences on a two-layer network.
fn lstm_gradient_check() -> Outcome {
    let cfg = LstmConfig {
        layers: 2,
        hidden: Some(3),
        lag: 3,
        seed: 6,
        weight_decay: 1e-3,
        ..Default::default()
    };
    let model = LstmModel::init(cfg, vec!["a".into(), "b".into()]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let seqs: Vec<Vec<Vec<f64>>> = (0..5)
        .map(|_| (0..3).map(|_| vec![gauss(&mut rng), gauss(&mut rng)]).collect())
        .collect();
    let targets: Vec<f64> = (0..5).map(|_| gauss(&mut rng)).collect();
    let (_, grad) = model.loss_and_grad(&seqs, &targets);
    let analytic: Vec<Vec<f64>> = grad.groups().iter().map(|g| g.to_vec()).collect();

    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let n_groups = analytic.len();
    for g in 0..n_groups {
        let len = analytic[g].len();
        let mut numeric = vec![0.0; len];
        for (i, num) in numeric.iter_mut().enumerate() {
            let mut plus = model.clone();
            plus.param_groups_mut()[g].1[i] += h;
            let mut minus = model.clone();
            minus.param_groups_mut()[g].1[i] -= h;
            *num = (plus.loss_and_grad(&seqs, &targets).0 - minus.loss_and_grad(&seqs, &targets).0) / (2.0 * h);
        }
        let diff = analytic[g]
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale =
            analytic[g].iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        if rel > worst.0 {
            let mut clone = model.clone();
            worst = (rel, clone.param_groups_mut()[g].0.clone());
        }
    }
    outcome(
        worst.0 < 1e-4,
        format!("{n_groups} groups, worst relative error {:.2e} ({})", worst.0, worst.1),
    )
}

/// LSTM settings used for the synthetic experiments.
fn experiment_lstm() -> LstmConfig {
    LstmConfig {
        optimizer: Optimizer::Adam,
        epochs: 200,
        hidden: Some(8),
        learning_rate: 1e-2,
        weight_decay: 0.01,
        ..Default::default()
    }
}

fn synthetic_grid(
    spec: &SynthSpec,
    seed: u64,
    sets: &[PredictorSet],
    models: &[ModelKind],
    full: bool,
) -> Vec<ForecastReport> {
    let syn = generate_synthetic(spec).unwrap();
    let mut cfg = PipelineConfig {
        seed: Some(seed),
        ..Default::default()
    };
    cfg.models.lstm = experiment_lstm();
    cfg.models.predictor_sets = sets.to_vec();
    cfg.models.kinds = models.to_vec();
    let panels: Vec<_> = build_all(&syn.dataset, &cfg, IndexSet::for_sets(sets))
        .unwrap()
        .into_iter()
        .map(|b| b.1)
        .collect();
    let mut gs = cfg.grid_spec();
    gs.include_full = full;
    let res = run_grid(&panels, &gs);
    assert!(res.failures.is_empty(), "{:?}", res.failures);
    res.reports
}

fn mean_test(reports: &[ForecastReport], full: bool, model: ModelKind, set: PredictorSet) -> f64 {
    let v: Vec<f64> = reports
        .iter()
        .filter(|r| (r.key.period == Period::Full) == full && r.key.model == model && r.key.set == set)
        .map(|r| r.mse_test)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

// 7. Per-year grids on data with a planted nonlinear signal.
fn nonlinear_signal_grid(all: &mut Vec<ForecastReport>) -> Outcome {
    let mut passed = 0;
    let mut lines = Vec::new();
    for k in 0..5u64 {
        let spec = SynthSpec {
            seed: 1000 + k,
            ..Default::default()
        };
        let reports = synthetic_grid(&spec, k, &PredictorSet::ALL, &[ModelKind::Lstm, ModelKind::Var], false);
        let lstm = |s| mean_test(&reports, false, ModelKind::Lstm, s);
        let var_mix = mean_test(&reports, false, ModelKind::Var, PredictorSet::Mixture);
        let (mix, nosi) = (lstm(PredictorSet::Mixture), lstm(PredictorSet::NoSi));
        let singles = [
            lstm(PredictorSet::Bsi),
            lstm(PredictorSet::Osi),
            lstm(PredictorSet::Msi),
        ];
        let ok = mix < var_mix && singles.iter().all(|s| mix < *s && *s < nosi);
        passed += ok as usize;
        lines.push(format!(
            "seed {k}: LSTM mix {mix:.3} < VAR mix {var_mix:.3}; singles {:.3}/{:.3}/{:.3}; NoSI {nosi:.3} -> {}",
            singles[0],
            singles[1],
            singles[2],
            if ok { "ok" } else { "no" }
        ));
        all.extend(reports);
    }
    outcome(
        passed >= 4,
        format!("{passed}/5 seeds\n      {}", lines.join("\n      ")),
    )
}

// 8. Regime-shifted data: the sentiment loading flips sign in the middle year.
fn regime_shift_grid(all: &mut Vec<ForecastReport>) -> Outcome {
    let mut lines = Vec::new();
    let mut passed = 0;
    for k in 0..3u64 {
        let spec = SynthSpec {
            seed: 2000 + k,
            regimes: vec![1.0, -1.0, 1.0],
            control_loading: 0.0,
            noise_std: 0.6,
            ..Default::default()
        };
        let reports = synthetic_grid(
            &spec,
            k,
            &[PredictorSet::Mixture],
            &[ModelKind::Lstm, ModelKind::Zero],
            true,
        );
        let yearly = mean_test(&reports, false, ModelKind::Lstm, PredictorSet::Mixture);
        let full = mean_test(&reports, true, ModelKind::Lstm, PredictorSet::Mixture);
        let zero = mean_test(&reports, true, ModelKind::Zero, PredictorSet::Mixture);
        let gap = (full - zero).abs() / zero;
        let ok = full > yearly && gap <= 0.25;
        passed += ok as usize;
        lines.push(format!(
            "seed {k}: full {full:.3} > yearly {yearly:.3}; zero {zero:.3}, gap {:.1}% -> {}",
            100.0 * gap,
            if ok { "ok" } else { "no" }
        ));
        all.extend(reports);
    }
    outcome(
        passed == 3,
        format!("{passed}/3 seeds\n      {}", lines.join("\n      ")),
    )
}

// 9. |D_wh| MSE_wh = |D_tr| MSE_tr + |D_te| MSE_te on every cell above.
fn mse_decomposition(all: &[ForecastReport]) -> Outcome {
    let mut worst: f64 = 0.0;
    for r in all {
        let (ntr, nte) = (r.n_train as f64, r.n_test as f64);
        let lhs = (ntr + nte) * r.mse_whole;
        let rhs = ntr * r.mse_train + nte * r.mse_test;
        worst = worst.max((lhs - rhs).abs() / (ntr + nte));
        if r.n_train != r.train.len() || r.n_test != r.test.len() {
            return outcome(false, format!("{}: counts disagree with stored points", r.key));
        }
    }
    outcome(
        !all.is_empty() && worst < 1e-10,
        format!("{} cells, max |difference| / |D_wh| = {worst:.2e}", all.len()),
    )
}

// 10. Two complete runs, each from freshly generated data, compared byte for byte.
fn run_pipeline(dir: &Path, jobs: usize) -> BTreeMap<String, Vec<u8>> {
    let spec = SynthSpec {
        seed: 10,
        days: 300,
        posts_per_day: 12,
        strikes_per_expiry: 16,
        ..Default::default()
    };
    pipeline::synth(&spec, &dir.join("data")).unwrap();
    let mut cfg = PipelineConfig::load(&dir.join("data/experiment.json")).unwrap();
    cfg.jobs = jobs;
    cfg.models.lstm = LstmConfig {
        epochs: 25,
        hidden: Some(6),
        ..experiment_lstm()
    };
    let out = dir.join("out");
    pipeline::build_indices(&cfg, &out).unwrap();
    pipeline::run_experiment(&cfg, &out).unwrap();
    pipeline::dump_panel(&cfg, &out).unwrap();
    let mut files = BTreeMap::new();
    for root in [dir.join("data"), out] {
        collect(&root, dir, &mut files);
    }
    files
}

fn collect(path: &Path, base: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
    for e in std::fs::read_dir(path).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(&p, base, acc);
        } else {
            acc.insert(
                p.strip_prefix(base).unwrap().display().to_string(),
                std::fs::read(&p).unwrap(),
            );
        }
    }
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(a.path(), 1);
    let second = run_pipeline(b.path(), 4);
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let same_names = first.keys().eq(second.keys());
    outcome(
        same_names && differing.is_empty() && first.len() > 20,
        format!(
            "{} files compared (1 vs 4 threads), {} differ",
            first.len(),
            differing.len()
        ),
    )
}

fn main() {
    let mut all_reports = Vec::new();
    type Check<'a> = Box<dyn FnMut() -> Outcome + 'a>;
    let mut failed = 0;
    let mut results: Vec<(usize, &str, Outcome, Duration, Option<Duration>)> = Vec::new();
    {
        let checks: Vec<(usize, &str, Option<Duration>, Check)> = vec![
            (
                1,
                "BSI properties",
                Some(Duration::from_secs(1)),
                Box::new(bsi_properties),
            ),
            (
                2,
                "micro metrics oracle",
                Some(Duration::from_secs(5)),
                Box::new(micro_metrics_oracle),
            ),
            (
                3,
                "risk-neutral skewness",
                Some(Duration::from_secs(1)),
                Box::new(risk_neutral_skewness),
            ),
            (4, "PCA", Some(Duration::from_secs(1)), Box::new(pca_checks)),
            (5, "VAR recovery", Some(Duration::from_secs(10)), Box::new(var_recovery)),
            (
                6,
                "LSTM gradient check",
                Some(Duration::from_secs(10)),
                Box::new(lstm_gradient_check),
            ),
            (
                7,
                "nonlinear signal grid",
                Some(Duration::from_secs(300)),
                Box::new(|| nonlinear_signal_grid(&mut all_reports)),
            ),
        ];
        for (n, name, limit, mut f) in checks {
            let t = Instant::now();
            let o = f();
            results.push((n, name, o, t.elapsed(), limit));
        }
    }
    let t = Instant::now();
    let o = regime_shift_grid(&mut all_reports);
    results.push((8, "regime shift grid", o, t.elapsed(), Some(Duration::from_secs(300))));
    let t = Instant::now();
    let o = mse_decomposition(&all_reports);
    results.push((9, "MSE decomposition", o, t.elapsed(), None));
    let t = Instant::now();
    let o = determinism();
    results.push((10, "end-to-end determinism", o, t.elapsed(), None));

    for (n, name, o, elapsed, limit) in results {
        let in_time = limit.is_none_or(|l| elapsed < l);
        let pass = o.pass && in_time;
        failed += !pass as usize;
        let timing = match limit {
            Some(l) => format!("{:.2}s, limit {}s", elapsed.as_secs_f64(), l.as_secs()),
            None => format!("{:.2}s", elapsed.as_secs_f64()),
        };
        println!(
            "criterion {n:>2} {:<24} {} [{timing}] {}",
            name,
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
