//! Market-implied sentiment: first principal component of standardized
//! daily market characteristics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{FactorSeries, SentimentSeries};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PcaError {
    #[error("need at least two factors, got {0}")]
    TooFewFactors(usize),
    #[error("need at least {needed} complete rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("factor `{0}` has zero variance over the fit window")]
    ZeroVariance(String),
    #[error("unknown factor `{0}`")]
    UnknownFactor(String),
    #[error("anchor `{0}` is not one of the fitted factors")]
    UnknownAnchor(String),
    #[error("row has {got} values, expected {expected}")]
    RowWidth { expected: usize, got: usize },
    #[error("Jacobi iteration did not converge (off-diagonal norm {0:e})")]
    NoConvergence(f64),
}

/// Factor whose loading fixes the sign of the component. A leading `-` in
/// the textual form asks for a negative loading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub factor: String,
    pub positive: bool,
}

impl Anchor {
    pub fn positive(factor: impl Into<String>) -> Self {
        Anchor {
            factor: factor.into(),
            positive: true,
        }
    }

    pub fn flipped(&self) -> Self {
        Anchor {
            factor: self.factor.clone(),
            positive: !self.positive,
        }
    }
}

impl FromStr for Anchor {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s.strip_prefix('-') {
            Some(rest) => Anchor {
                factor: rest.to_string(),
                positive: false,
            },
            None => Anchor {
                factor: s.trim_start_matches('+').to_string(),
                positive: true,
            },
        })
    }
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.positive {
            f.write_str("-")?;
        }
        f.write_str(&self.factor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub factors: Vec<String>,
    pub means: Vec<f64>,
    /// Sample standard deviations over the fit window.
    pub stds: Vec<f64>,
    /// Unit-norm first eigenvector of the correlation matrix.
    pub loadings: Vec<f64>,
    pub eigenvalue: f64,
    pub explained_variance_ratio: f64,
    pub anchor: Anchor,
    pub n_rows: usize,
}

const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

fn off_norm(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i][j] * a[i][j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with eigenvectors as the matching columns.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>), PcaError> {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut sweeps = 0;
    while off_norm(&a) > JACOBI_TOL {
        if sweeps == MAX_SWEEPS {
            return Err(PcaError::NoConvergence(off_norm(&a)));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[p][k], a[q][k]);
                    a[p][k] = c * pk - s * qk;
                    a[q][k] = s * pk + c * qk;
                }
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for row in v.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&c| v[r][c]).collect()).collect();
    Ok((values, vectors))
}

fn mean_std(col: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = col.clone().count() as f64;
    let mean = col.clone().sum::<f64>() / n;
    let var = col.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sample correlation matrix of complete rows (rows x K).
pub fn correlation_matrix(rows: &[Vec<f64>], means: &[f64], stds: &[f64]) -> Vec<Vec<f64>> {
    let k = means.len();
    let n = rows.len() as f64;
    let mut c = vec![vec![0.0; k]; k];
    for row in rows {
        let z: Vec<f64> = (0..k).map(|j| (row[j] - means[j]) / stds[j]).collect();
        for i in 0..k {
            for j in i..k {
                c[i][j] += z[i] * z[j];
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            c[i][j] /= n - 1.0;
            c[j][i] = c[i][j];
        }
    }
    c
}

/// Fits correlation-matrix PCA on complete rows.
pub fn fit_pca(names: &[String], rows: &[Vec<f64>], anchor: &Anchor) -> Result<PcaModel, PcaError> {
    let k = names.len();
    if k < 2 {
        return Err(PcaError::TooFewFactors(k));
    }
    let anchor_idx = names
        .iter()
        .position(|n| *n == anchor.factor)
        .ok_or_else(|| PcaError::UnknownAnchor(anchor.factor.clone()))?;
    if rows.len() < k + 1 {
        return Err(PcaError::InsufficientData {
            needed: k + 1,
            got: rows.len(),
        });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != k) {
        return Err(PcaError::RowWidth {
            expected: k,
            got: r.len(),
        });
    }

    let (mut means, mut stds) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for (j, name) in names.iter().enumerate() {
        let (m, s) = mean_std(rows.iter().map(|r| r[j]));
        // relative tolerance so tiny-but-genuine variation survives
        if !(s > 1e-12 * m.abs().max(1e-300)) {
            return Err(PcaError::ZeroVariance(name.clone()));
        }
        means.push(m);
        stds.push(s);
    }

    let corr = correlation_matrix(rows, &means, &stds);
    let (values, vectors) = symmetric_eigen(&corr)?;
    let mut loadings: Vec<f64> = vectors.iter().map(|row| row[0]).collect();
    let norm = loadings.iter().map(|x| x * x).sum::<f64>().sqrt();
    for l in &mut loadings {
        *l /= norm;
    }
    if (loadings[anchor_idx] < 0.0) == anchor.positive {
        for l in &mut loadings {
            *l = -*l;
        }
    }
    Ok(PcaModel {
        factors: names.to_vec(),
        means,
        stds,
        loadings,
        eigenvalue: values[0],
        explained_variance_ratio: (values[0] / k as f64).clamp(0.0, 1.0),
        anchor: anchor.clone(),
        n_rows: rows.len(),
    })
}

impl PcaModel {
    /// Score of one raw row (values in `factors` order).
    pub fn score(&self, row: &[f64]) -> f64 {
        row.iter()
            .zip(&self.loadings)
            .zip(self.means.iter().zip(&self.stds))
            .map(|((x, w), (m, s))| w * (x - m) / s)
            .sum()
    }
}

fn lookup<'a>(
    factors: &'a BTreeMap<String, FactorSeries>,
    names: &[String],
) -> Result<Vec<&'a FactorSeries>, PcaError> {
    names
        .iter()
        .map(|n| factors.get(n).ok_or_else(|| PcaError::UnknownFactor(n.clone())))
        .collect()
}

fn row_at(series: &[&FactorSeries], date: NaiveDate) -> Option<Vec<f64>> {
    series.iter().map(|s| s.values.get(&date).copied()).collect()
}

/// Fits on the complete rows among `window` dates.
pub fn fit_pca_on(
    factors: &BTreeMap<String, FactorSeries>,
    names: &[String],
    window: impl IntoIterator<Item = NaiveDate>,
    anchor: &Anchor,
) -> Result<PcaModel, PcaError> {
    let series = lookup(factors, names)?;
    let rows: Vec<Vec<f64>> = window.into_iter().filter_map(|d| row_at(&series, d)).collect();
    fit_pca(names, &rows, anchor)
}

/// MSI on each date; dates with any missing factor are missing.
pub fn msi_series(
    model: &PcaModel,
    factors: &BTreeMap<String, FactorSeries>,
    dates: impl IntoIterator<Item = NaiveDate>,
    stock_id: &str,
) -> Result<SentimentSeries, PcaError> {
    let series = lookup(factors, &model.factors)?;
    let mut out = SentimentSeries::new("msi", stock_id);
    for d in dates {
        out.values.insert(d, row_at(&series, d).map(|r| model.score(&r)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("f{i}")).collect()
    }

    fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
        m.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    #[test]
    fn rank_one_pair() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 3.0 * i as f64 + 1.0]).collect();
        let m = fit_pca(&names(2), &rows, &Anchor::positive("f0")).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.loadings[0] - h).abs() < 1e-12 && (m.loadings[1] - h).abs() < 1e-12);
        assert!((m.explained_variance_ratio - 1.0).abs() < 1e-8);
        // one std above the mean on both factors
        let row = vec![m.means[0] + m.stds[0], m.means[1] + m.stds[1]];
        assert!((m.score(&row) - 2f64.sqrt()).abs() < 1e-12);
        assert!(m.score(&m.means.clone()).abs() < 1e-12);
    }

    #[test]
    fn independent_normals_split_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let m = fit_pca(&names(2), &rows, &Anchor::positive("f0")).unwrap();
        assert!((0.45..=0.55).contains(&m.explained_variance_ratio));
    }

    #[test]
    fn errors() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 5.0]];
        assert_eq!(
            fit_pca(&names(2), &rows, &Anchor::positive("f0")).unwrap_err(),
            PcaError::ZeroVariance("f0".into())
        );
        assert!(matches!(
            fit_pca(&names(2), &rows[..2], &Anchor::positive("f0")),
            Err(PcaError::InsufficientData { needed: 3, got: 2 })
        ));
        assert!(matches!(
            fit_pca(&names(1), &rows, &Anchor::positive("f0")),
            Err(PcaError::TooFewFactors(1))
        ));
        assert!(matches!(
            fit_pca(&names(2), &rows, &Anchor::positive("zz")),
            Err(PcaError::UnknownAnchor(_))
        ));
    }

    /// Largest root of the characteristic cubic of a symmetric 3x3 matrix by
    /// the trigonometric method, and its eigenvector via a cross product.
    fn cubic_oracle(a: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
        let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| (a[i][j] - if i == j { q } else { 0.0 }) / p).collect())
            .collect();
        let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det_b / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let lambda = q + 2.0 * p * phi.cos();
        let m: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| a[i][j] - if i == j { lambda } else { 0.0 }).collect())
            .collect();
        let cross = |u: &[f64], v: &[f64]| {
            vec![
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ]
        };
        let candidates = [cross(&m[0], &m[1]), cross(&m[0], &m[2]), cross(&m[1], &m[2])];
        let best = candidates
            .into_iter()
            .max_by(|x, y| {
                let nx: f64 = x.iter().map(|t| t * t).sum();
                let ny: f64 = y.iter().map(|t| t * t).sum();
                nx.total_cmp(&ny)
            })
            .unwrap();
        let n = best.iter().map(|t| t * t).sum::<f64>().sqrt();
        (lambda, best.iter().map(|t| t / n).collect())
    }

    #[test]
    fn three_factor_matches_characteristic_polynomial() {
        // factors built from shared latent drivers to get a known correlation structure
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let (a, b, c, d): (f64, f64, f64, f64) = (
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                vec![a + 0.5 * b, 2.0 * a - c + 10.0, 0.3 * a + d - 0.4 * b]
            })
            .collect();
        let m = fit_pca(&names(3), &rows, &Anchor::positive("f0")).unwrap();
        let corr = correlation_matrix(&rows, &m.means, &m.stds);
        let (lambda, mut v) = cubic_oracle(&corr);
        if v[0] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        assert!((m.eigenvalue - lambda).abs() < 1e-9);
        for (a, b) in m.loadings.iter().zip(&v) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn eigen_pair_residual_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = 8;
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let common: f64 = StandardNormal.sample(&mut rng);
                (0..k)
                    .map(|j| common * (j as f64 * 0.1 + 0.2) + gauss(&mut rng))
                    .collect()
            })
            .collect();
        let m = fit_pca(&names(k), &rows, &Anchor::positive("f3")).unwrap();
        let corr = correlation_matrix(&rows, &m.means, &m.stds);
        let cw = matvec(&corr, &m.loadings);
        let resid: f64 = cw
            .iter()
            .zip(&m.loadings)
            .map(|(a, w)| (a - m.eigenvalue * w).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(resid < 1e-8);
        let norm: f64 = m.loadings.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-10);
        assert!(m.loadings[3] > 0.0);

        let (vals, vecs) = symmetric_eigen(&corr).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = (0..k).map(|r| vecs[r][i] * vecs[r][j]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    fn frame(rows: &[Vec<f64>], start: NaiveDate) -> BTreeMap<String, FactorSeries> {
        let mut out = BTreeMap::new();
        for (j, name) in names(rows[0].len()).into_iter().enumerate() {
            let values = rows
                .iter()
                .enumerate()
                .map(|(i, r)| (start + chrono::Duration::days(i as i64), r[j]))
                .collect();
            out.insert(name.clone(), FactorSeries { name, values });
        }
        out
    }

    #[test]
    fn msi_missing_and_unknown() {
        let start: NaiveDate = "2016-01-04".parse().unwrap();
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64])
            .collect();
        let mut f = frame(&rows, start);
        let dates: Vec<_> = (0..30).map(|i| start + chrono::Duration::days(i)).collect();
        let m = fit_pca_on(&f, &names(3), dates.clone(), &Anchor::positive("f2")).unwrap();
        f.get_mut("f1").unwrap().values.remove(&dates[4]);
        let s = msi_series(&m, &f, dates.clone(), "X").unwrap();
        assert_eq!(s.values[&dates[4]], None);
        assert!(s.values[&dates[5]].is_some());
        f.remove("f0");
        assert_eq!(
            msi_series(&m, &f, dates, "X").unwrap_err(),
            PcaError::UnknownFactor("f0".into())
        );
    }

    proptest::proptest! {
        #[test]
        fn rescaling_and_anchor_flip(scale in 0.001f64..1000.0, which in 0usize..3, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..60)
                .map(|_| {
                    let c: f64 = StandardNormal.sample(&mut rng);
                    (0..3).map(|_| c + gauss(&mut rng)).collect()
                })
                .collect();
            let scaled: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().enumerate().map(|(j, x)| if j == which { x * scale } else { *x }).collect())
                .collect();
            let a = fit_pca(&names(3), &rows, &Anchor::positive("f1")).unwrap();
            let b = fit_pca(&names(3), &scaled, &Anchor::positive("f1")).unwrap();
            let neg = fit_pca(&names(3), &rows, &Anchor::positive("f1").flipped()).unwrap();
            for (r, s) in rows.iter().zip(&scaled) {
                proptest::prop_assert!((a.score(r) - b.score(s)).abs() < 1e-8);
                proptest::prop_assert_eq!(a.score(r), -neg.score(r));
            }
            proptest::prop_assert!(a.loadings[1] > 0.0);
        }
    }

    #[test]
    fn anchor_text_form() {
        let a: Anchor = "-short_ratio".parse().unwrap();
        assert!(!a.positive);
        assert_eq!(a.to_string(), "-short_ratio");
        assert_eq!("turnover".parse::<Anchor>().unwrap(), Anchor::positive("turnover"));
    }
}
