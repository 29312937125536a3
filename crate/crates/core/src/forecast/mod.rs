//! Return forecasters sharing one fit/predict contract: VAR(ℓ) by least
//! squares, a small LSTM, and the constant-zero baseline.

mod lstm;
mod var;

pub use lstm::{fit_lstm, LstmConfig, LstmLayer, LstmModel, Optimizer};
pub use var::{fit_var, VarModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::LaggedRow;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ForecastError {
    #[error("need more than {needed} training rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("expected input dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("design matrix singular even after ridge fallback (min pivot {min_pivot:e}, trace {trace:e})")]
    Singular { min_pivot: f64, trace: f64 },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("model dump: {0}")]
    Serde(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "VAR")]
    Var,
    Zero,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Lstm, ModelKind::Var, ModelKind::Zero];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Lstm => "LSTM",
            ModelKind::Var => "VAR",
            ModelKind::Zero => "Zero",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(ModelKind::Lstm),
            "var" => Ok(ModelKind::Var),
            "zero" => Ok(ModelKind::Zero),
            _ => Err(format!("unknown model `{s}`")),
        }
    }
}

/// Always predicts zero.
pub fn predict_zero<T: ?Sized>(_input: &T) -> f64 {
    0.0
}

/// Mean squared error of paired predictions.
pub fn mse(predicted: &[f64], actual: &[f64]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / predicted.len() as f64
}

/// A trained model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model")]
pub enum Fitted {
    Var(VarModel),
    Lstm(LstmModel),
    Zero,
}

impl Fitted {
    pub fn kind(&self) -> ModelKind {
        match self {
            Fitted::Var(_) => ModelKind::Var,
            Fitted::Lstm(_) => ModelKind::Lstm,
            Fitted::Zero => ModelKind::Zero,
        }
    }

    pub fn predict_row(&self, row: &LaggedRow) -> Result<f64, ForecastError> {
        match self {
            Fitted::Var(m) => m.predict(&row.inputs),
            Fitted::Lstm(m) => m.predict_flat(&row.inputs),
            Fitted::Zero => Ok(predict_zero(row)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model() {
        assert_eq!(predict_zero(&[1.0, 2.0][..]), 0.0);
        assert_eq!(predict_zero("anything"), 0.0);
        let r = [0.01, -0.01];
        let z = [0.0; 2];
        assert!((mse(&z, &r) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_mse_is_mean_square() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let r: Vec<f64> = (0..777).map(|_| rng.random_range(-0.05..0.05)).collect();
        let preds: Vec<f64> = r.iter().map(predict_zero).collect();
        let mut acc = 0.0;
        for x in &r {
            acc += x * x;
        }
        assert!((mse(&preds, &r) - acc / 777.0).abs() < 1e-18);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
    }
}
