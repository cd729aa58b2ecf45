// SPDX-License-Identifier: Apache-2.0

//! L2-regularised binary logistic regression by full-batch gradient descent.
//!
//! Features are standardized with training statistics (f32, via
//! [`numkernel::standardize`]); the optimisation itself runs in f64 from a
//! zero start, so repeated fits are bitwise identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{self, ColumnStats, Matrix};
use crate::probing::dataset::ActivationDataset;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { l2: 1e-2, learning_rate: 0.1, max_iters: 5000, tol: 1e-8 }
    }
}

/// `mean_i [softplus(z_i) − y_i z_i] + (l2/2)‖w‖²` with `z_i = w·x_i + b`.
/// Parameters are packed as `[w_0, …, w_{d−1}, b]`.
#[derive(Clone, Debug)]
pub struct LogisticObjective {
    x: Vec<f64>,
    y: Vec<f64>,
    d: usize,
    l2: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticObjective {
    pub fn new(x: &Matrix, labels: &[bool], l2: f64) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", x.rows(), labels.len())));
        }
        if !(l2 >= 0.0) {
            return Err(Error::Range(format!("l2 {l2} must be >= 0")));
        }
        Ok(Self {
            x: x.data().iter().map(|&v| v as f64).collect(),
            y: labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
            d: x.cols(),
            l2,
        })
    }

    pub fn n_params(&self) -> usize {
        self.d + 1
    }

    fn logit(&self, params: &[f64], i: usize) -> f64 {
        let row = &self.x[i * self.d..(i + 1) * self.d];
        let mut z = params[self.d];
        for (w, x) in params[..self.d].iter().zip(row) {
            z += w * x;
        }
        z
    }

    fn penalty(&self, params: &[f64]) -> f64 {
        0.5 * self.l2 * params[..self.d].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let n = self.y.len() as f64;
        let mut total = 0.0;
        for i in 0..self.y.len() {
            let z = self.logit(params, i);
            total += softplus(z) - self.y[i] * z;
        }
        total / n + self.penalty(params)
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        self.loss_and_gradient(params).1
    }

    pub fn loss_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let n = self.y.len() as f64;
        let mut g = vec![0.0; self.d + 1];
        let mut total = 0.0;
        for i in 0..self.y.len() {
            let z = self.logit(params, i);
            total += softplus(z) - self.y[i] * z;
            let r = sigmoid(z) - self.y[i];
            let row = &self.x[i * self.d..(i + 1) * self.d];
            for (gj, x) in g.iter_mut().zip(row) {
                *gj += r * x;
            }
            g[self.d] += r;
        }
        for gj in g.iter_mut() {
            *gj /= n;
        }
        for j in 0..self.d {
            g[j] += self.l2 * params[j];
        }
        (total / n + self.penalty(params), g)
    }
}

/// A fitted probe over a subset of the original dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub selected_dims: Vec<usize>,
    /// Weights on standardized features, aligned with `selected_dims`.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardization: ColumnStats,
    pub l2: f64,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl ProbeModel {
    /// Probability of class 1 for every row of raw (unstandardized) features.
    pub fn predict_proba(&self, features: &Matrix) -> Result<Vec<f64>> {
        let x = features.select_columns(&self.selected_dims)?;
        let (z, _) = numkernel::standardize(&x, Some(&self.standardization))?;
        Ok((0..z.rows())
            .map(|i| {
                let mut s = self.bias;
                for (w, v) in self.weights.iter().zip(z.row(i)) {
                    s += w * *v as f64;
                }
                sigmoid(s)
            })
            .collect())
    }

    /// Class-1 predictions at the fixed 0.5 threshold.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<bool>> {
        Ok(self.predict_proba(features)?.into_iter().map(|p| p >= 0.5).collect())
    }
}

pub fn fit_logistic(train: &ActivationDataset, config: &ProbeConfig) -> Result<ProbeModel> {
    let dims: Vec<usize> = (0..train.dims()).collect();
    fit_on_dims(train, &dims, config)
}

/// Fits on the listed (ascending, unique) dimensions only.
pub fn fit_on_dims(train: &ActivationDataset, dims: &[usize], config: &ProbeConfig) -> Result<ProbeModel> {
    let (neg, pos) = train.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::DegenerateData(format!(
            "training data has {neg} negative and {pos} positive rows; both classes are needed"
        )));
    }
    if dims.is_empty() || dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Range("dimensions must be nonempty, ascending and unique".into()));
    }
    if !(config.learning_rate > 0.0) || !(config.tol >= 0.0) {
        return Err(Error::Range("learning rate must be > 0 and tol >= 0".into()));
    }
    let x = train.features.select_columns(dims)?;
    let (z, stats) = numkernel::standardize(&x, None)?;
    let objective = LogisticObjective::new(&z, &train.labels, config.l2)?;
    let mut params = vec![0.0; objective.n_params()];
    let (initial_loss, mut grad) = objective.loss_and_gradient(&params);
    let mut loss = initial_loss;
    let mut iterations = 0;
    while iterations < config.max_iters {
        let step: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - config.learning_rate * g).collect();
        let (next_loss, next_grad) = objective.loss_and_gradient(&step);
        iterations += 1;
        let improvement = loss - next_loss;
        if improvement < 0.0 {
            // Overshoot: keep the better point.
            break;
        }
        params = step;
        loss = next_loss;
        grad = next_grad;
        if improvement < config.tol {
            break;
        }
    }
    let bias = params.pop().expect("bias parameter");
    Ok(ProbeModel {
        selected_dims: dims.to_vec(),
        weights: params,
        bias,
        standardization: stats,
        l2: config.l2,
        iterations,
        initial_loss,
        final_loss: loss,
    })
}

/// Recursive feature elimination down to `target_k` dimensions. Each round
/// refits on the surviving dimensions and drops those with the smallest
/// |standardized weight|: ⌊current/2⌋ of them while more than 2·target_k
/// remain, then one at a time. Ties drop the higher index first.
pub fn rfe_select(train: &ActivationDataset, target_k: usize, config: &ProbeConfig) -> Result<Vec<usize>> {
    let d = train.dims();
    if target_k == 0 || target_k >= d {
        return Err(Error::Range(format!("target_k {target_k} must be in 1..{d}")));
    }
    let mut current: Vec<usize> = (0..d).collect();
    while current.len() > target_k {
        let probe = fit_on_dims(train, &current, config)?;
        let n = current.len();
        let drop = if n > 2 * target_k { n / 2 } else { 1 }.min(n - target_k);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            probe.weights[a]
                .abs()
                .total_cmp(&probe.weights[b].abs())
                .then(current[b].cmp(&current[a]))
        });
        let mut dropped: Vec<usize> = order[..drop].iter().map(|&i| current[i]).collect();
        dropped.sort_unstable();
        current.retain(|c| dropped.binary_search(c).is_err());
    }
    Ok(current)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// `[[tn, fp], [fn, tp]]`: rows are true labels, columns predictions.
    pub confusion: [[usize; 2]; 2],
}

impl Metrics {
    pub fn from_predictions(truth: &[bool], predicted: &[bool]) -> Self {
        let mut c = [[0usize; 2]; 2];
        for (&t, &p) in truth.iter().zip(predicted) {
            c[t as usize][p as usize] += 1;
        }
        let [[tn, fp], [fn_, tp]] = c;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1, accuracy: ratio(tp + tn, truth.len()), confusion: c }
    }
}

pub fn evaluate_probe(probe: &ProbeModel, test: &ActivationDataset) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::InsufficientData("cannot evaluate on an empty set".into()));
    }
    let predicted = probe.predict(&test.features)?;
    Ok(Metrics::from_predictions(&test.labels, &predicted))
}
