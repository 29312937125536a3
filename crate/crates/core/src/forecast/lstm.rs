use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ForecastError;
use crate::panel::LaggedRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Gd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub layers: usize,
    pub epochs: usize,
    /// `None` means lag × input width.
    pub hidden: Option<usize>,
    pub lag: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// `None` trains on the full batch each epoch.
    pub batch_size: Option<usize>,
    /// L2 penalty on weights (not biases).
    pub weight_decay: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            layers: 1,
            epochs: 200,
            hidden: None,
            lag: 2,
            learning_rate: 1e-2,
            seed: 0,
            optimizer: Optimizer::Gd,
            batch_size: None,
            weight_decay: 0.0,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |m: &str| Err(ForecastError::InvalidConfig(m.to_string()));
        if self.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.lag == 0 {
            return bad("lag must be at least 1");
        }
        if self.hidden == Some(0) {
            return bad("hidden size must be positive");
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        Ok(())
    }

    pub fn hidden_for(&self, width: usize) -> usize {
        self.hidden.unwrap_or(self.lag * width)
    }
}

/// Gate blocks are stacked `[input; forget; cell; output]`, each H rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_dim: usize,
    pub hidden: usize,
    /// 4H × input_dim, row-major.
    pub w: Vec<f64>,
    /// 4H × H, row-major.
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub config: LstmConfig,
    pub columns: Vec<String>,
    pub layers: Vec<LstmLayer>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    /// Training loss after the last epoch.
    pub final_loss: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Step {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
}

impl LstmLayer {
    fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-a..=a)).collect() };
        let w = draw(4 * hidden * input_dim);
        let u = draw(4 * hidden * hidden);
        let mut b = draw(4 * hidden);
        for v in &mut b[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmLayer {
            input_dim,
            hidden,
            w,
            u,
            b,
        }
    }

    fn forward(&self, xs: &[Vec<f64>]) -> Vec<Step> {
        let h = self.hidden;
        let mut steps: Vec<Step> = Vec::with_capacity(xs.len());
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for x in xs {
            let mut z = self.b.clone();
            for (r, zr) in z.iter_mut().enumerate() {
                let wr = &self.w[r * self.input_dim..(r + 1) * self.input_dim];
                let ur = &self.u[r * h..(r + 1) * h];
                *zr += wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    + ur.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
            }
            let i: Vec<f64> = z[..h].iter().map(|v| sigmoid(*v)).collect();
            let f: Vec<f64> = z[h..2 * h].iter().map(|v| sigmoid(*v)).collect();
            let g: Vec<f64> = z[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
            let o: Vec<f64> = z[3 * h..].iter().map(|v| sigmoid(*v)).collect();
            let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
            let hn: Vec<f64> = (0..h).map(|k| o[k] * c[k].tanh()).collect();
            steps.push(Step {
                input: x.clone(),
                h_prev: std::mem::replace(&mut h_prev, hn),
                c_prev: std::mem::replace(&mut c_prev, c.clone()),
                i,
                f,
                g,
                o,
                c,
            });
        }
        steps
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to each input step.
    fn backward(&self, steps: &[Step], dh_out: &[Vec<f64>], grad: &mut LstmLayer) -> Vec<Vec<f64>> {
        let h = self.hidden;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dxs = vec![vec![0.0; self.input_dim]; steps.len()];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            for k in 0..h {
                let dh = dh_out[t][k] + dh_next[k];
                let tc = s.c[k].tanh();
                let d_o = dh * tc;
                let dc = dh * s.o[k] * (1.0 - tc * tc) + dc_next[k];
                let di = dc * s.g[k];
                let dg = dc * s.i[k];
                let df = dc * s.c_prev[k];
                dc_next[k] = dc * s.f[k];
                dz[k] = di * s.i[k] * (1.0 - s.i[k]);
                dz[h + k] = df * s.f[k] * (1.0 - s.f[k]);
                dz[2 * h + k] = dg * (1.0 - s.g[k] * s.g[k]);
                dz[3 * h + k] = d_o * s.o[k] * (1.0 - s.o[k]);
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, d) in dz.iter().enumerate() {
                grad.b[r] += d;
                let wr = r * self.input_dim;
                for (j, x) in s.input.iter().enumerate() {
                    grad.w[wr + j] += d * x;
                    dxs[t][j] += d * self.w[wr + j];
                }
                let ur = r * h;
                for j in 0..h {
                    grad.u[ur + j] += d * s.h_prev[j];
                    dh_next[j] += d * self.u[ur + j];
                }
            }
        }
        dxs
    }

    fn zeros_like(&self) -> LstmLayer {
        LstmLayer {
            input_dim: self.input_dim,
            hidden: self.hidden,
            w: vec![0.0; self.w.len()],
            u: vec![0.0; self.u.len()],
            b: vec![0.0; self.b.len()],
        }
    }
}

/// Gradient buffers with the same layout as the model parameters.
#[derive(Debug, Clone)]
pub struct LstmGrad {
    pub layers: Vec<LstmLayer>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl LstmModel {
    /// Randomly initialized, untrained network.
    pub fn init(config: LstmConfig, columns: Vec<String>) -> Result<Self, ForecastError> {
        config.validate()?;
        let width = columns.len();
        if width == 0 {
            return Err(ForecastError::InvalidConfig("no input columns".into()));
        }
        let hidden = config.hidden_for(width);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = (0..config.layers)
            .map(|l| LstmLayer::init(if l == 0 { width } else { hidden }, hidden, &mut rng))
            .collect();
        let a = 1.0 / (hidden as f64).sqrt();
        let head_w = (0..hidden).map(|_| rng.random_range(-a..=a)).collect();
        Ok(LstmModel {
            config,
            columns,
            layers,
            head_w,
            head_b: 0.0,
            final_loss: f64::NAN,
        })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn hidden(&self) -> usize {
        self.head_w.len()
    }

    fn check_sequence(&self, seq: &[Vec<f64>]) -> Result<(), ForecastError> {
        if seq.len() != self.config.lag {
            return Err(ForecastError::DimensionMismatch {
                expected: self.config.lag,
                got: seq.len(),
            });
        }
        if let Some(bad) = seq.iter().find(|v| v.len() != self.width()) {
            return Err(ForecastError::DimensionMismatch {
                expected: self.width(),
                got: bad.len(),
            });
        }
        Ok(())
    }

    fn run(&self, seq: &[Vec<f64>]) -> (Vec<Vec<Step>>, f64) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut xs = seq.to_vec();
        for layer in &self.layers {
            let steps = layer.forward(&xs);
            xs = steps
                .iter()
                .map(|s| s.o.iter().zip(&s.c).map(|(o, c)| o * c.tanh()).collect())
                .collect();
            caches.push(steps);
        }
        let last = xs.last().expect("sequence is non-empty");
        let y = self.head_b + self.head_w.iter().zip(last).map(|(a, b)| a * b).sum::<f64>();
        (caches, y)
    }

    /// Forward pass over a sequence ordered oldest first.
    pub fn predict(&self, seq: &[Vec<f64>]) -> Result<f64, ForecastError> {
        self.check_sequence(seq)?;
        Ok(self.run(seq).1)
    }

    /// Forward pass from a flat `[Y_{t-1}; ...; Y_{t-ℓ}]` vector.
    pub fn predict_flat(&self, inputs: &[f64]) -> Result<f64, ForecastError> {
        let n = self.width();
        if inputs.len() != n * self.config.lag {
            return Err(ForecastError::DimensionMismatch {
                expected: n * self.config.lag,
                got: inputs.len(),
            });
        }
        self.predict(&to_sequence(inputs, n))
    }

    /// Mean squared error over the batch and its gradient.
    pub fn loss_and_grad(&self, seqs: &[Vec<Vec<f64>>], targets: &[f64]) -> (f64, LstmGrad) {
        let mut grad = LstmGrad {
            layers: self.layers.iter().map(LstmLayer::zeros_like).collect(),
            head_w: vec![0.0; self.hidden()],
            head_b: 0.0,
        };
        let n = seqs.len() as f64;
        let mut loss = 0.0;
        for (seq, target) in seqs.iter().zip(targets) {
            let (caches, y) = self.run(seq);
            let err = y - target;
            loss += err * err / n;
            let dy = 2.0 * err / n;
            grad.head_b += dy;
            let top = caches.last().unwrap();
            let t_last = top.len() - 1;
            let h_last: Vec<f64> = top[t_last]
                .o
                .iter()
                .zip(&top[t_last].c)
                .map(|(o, c)| o * c.tanh())
                .collect();
            for (g, hv) in grad.head_w.iter_mut().zip(&h_last) {
                *g += dy * hv;
            }
            let mut dh: Vec<Vec<f64>> = vec![vec![0.0; self.hidden()]; top.len()];
            dh[t_last] = self.head_w.iter().map(|w| w * dy).collect();
            for (l, layer) in self.layers.iter().enumerate().rev() {
                dh = layer.backward(&caches[l], &dh, &mut grad.layers[l]);
            }
        }
        let wd = self.config.weight_decay;
        if wd > 0.0 {
            for (g, p) in grad.layers.iter_mut().zip(&self.layers) {
                for (gw, w) in g.w.iter_mut().zip(&p.w).chain(g.u.iter_mut().zip(&p.u)) {
                    *gw += 2.0 * wd * w;
                }
                loss += wd * (p.w.iter().map(|v| v * v).sum::<f64>() + p.u.iter().map(|v| v * v).sum::<f64>());
            }
            for (g, w) in grad.head_w.iter_mut().zip(&self.head_w) {
                *g += 2.0 * wd * w;
            }
            loss += wd * self.head_w.iter().map(|v| v * v).sum::<f64>();
        }
        (loss, grad)
    }

    /// Parameter groups in a fixed order: per layer W, U, b, then head weights
    /// and head bias.
    pub fn param_groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{l}.w"), &mut layer.w[..]));
            out.push((format!("layer{l}.u"), &mut layer.u[..]));
            out.push((format!("layer{l}.b"), &mut layer.b[..]));
        }
        out.push(("head.w".into(), &mut self.head_w[..]));
        out.push(("head.b".into(), std::slice::from_mut(&mut self.head_b)));
        out
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(&l.w);
            v.extend_from_slice(&l.u);
            v.extend_from_slice(&l.b);
        }
        v.extend_from_slice(&self.head_w);
        v.push(self.head_b);
        v
    }

    pub fn to_json(&self) -> Result<String, ForecastError> {
        serde_json::to_string(self).map_err(|e| ForecastError::Serde(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, ForecastError> {
        serde_json::from_str(s).map_err(|e| ForecastError::Serde(e.to_string()))
    }
}

impl LstmGrad {
    pub fn groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.u);
            out.push(&l.b);
        }
        out.push(&self.head_w);
        out.push(std::slice::from_ref(&self.head_b));
        out
    }
}

/// Splits a flat lag-1-first input vector into blocks ordered oldest first.
pub fn to_sequence(inputs: &[f64], width: usize) -> Vec<Vec<f64>> {
    let mut blocks: Vec<Vec<f64>> = inputs.chunks(width).map(|c| c.to_vec()).collect();
    blocks.reverse();
    blocks
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

/// Trains on squared error between the head output and each row's target.
pub fn fit_lstm(rows: &[LaggedRow], columns: &[String], config: &LstmConfig) -> Result<LstmModel, ForecastError> {
    if rows.is_empty() {
        return Err(ForecastError::TooFewRows { needed: 0, got: 0 });
    }
    let mut model = LstmModel::init(config.clone(), columns.to_vec())?;
    let width = columns.len();
    let seqs: Vec<Vec<Vec<f64>>> = rows
        .iter()
        .map(|r| {
            if r.inputs.len() != width * config.lag {
                Err(ForecastError::DimensionMismatch {
                    expected: width * config.lag,
                    got: r.inputs.len(),
                })
            } else {
                Ok(to_sequence(&r.inputs, width))
            }
        })
        .collect::<Result<_, _>>()?;
    let targets: Vec<f64> = rows.iter().map(|r| r.target).collect();

    // shuffling uses its own stream so initialization does not depend on batching
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(config.seed, "lstm/batches"));
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let batch = config.batch_size.unwrap_or(rows.len()).min(rows.len());
    let mut adam = Adam {
        m: model
            .param_groups_mut()
            .iter()
            .map(|(_, p)| vec![0.0; p.len()])
            .collect(),
        v: model
            .param_groups_mut()
            .iter()
            .map(|(_, p)| vec![0.0; p.len()])
            .collect(),
        t: 0,
    };
    let lr = config.learning_rate;
    for epoch in 0..config.epochs {
        if batch < rows.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let bs: Vec<Vec<Vec<f64>>> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let bt: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grad) = model.loss_and_grad(&bs, &bt);
            if !loss.is_finite() {
                return Err(ForecastError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * chunk.len() as f64 / rows.len() as f64;
            let grads = grad.groups();
            match config.optimizer {
                Optimizer::Gd => {
                    for ((_, p), g) in model.param_groups_mut().into_iter().zip(&grads) {
                        for (pv, gv) in p.iter_mut().zip(g.iter()) {
                            *pv -= lr * gv;
                        }
                    }
                }
                Optimizer::Adam => {
                    const B1: f64 = 0.9;
                    const B2: f64 = 0.999;
                    adam.t += 1;
                    let c1 = 1.0 - B1.powi(adam.t);
                    let c2 = 1.0 - B2.powi(adam.t);
                    for (k, ((_, p), g)) in model.param_groups_mut().into_iter().zip(&grads).enumerate() {
                        for (j, (pv, gv)) in p.iter_mut().zip(g.iter()).enumerate() {
                            let m = &mut adam.m[k][j];
                            let v = &mut adam.v[k][j];
                            *m = B1 * *m + (1.0 - B1) * gv;
                            *v = B2 * *v + (1.0 - B2) * gv * gv;
                            *pv -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                        }
                    }
                }
            }
        }
        if !model.parameters().iter().all(|v| v.is_finite()) {
            return Err(ForecastError::NonFiniteLoss { epoch });
        }
        model.final_loss = epoch_loss;
    }
    Ok(model)
}
