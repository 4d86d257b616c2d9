//! Soft-margin SVM with a cubic polynomial kernel, trained by SMO.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
/// Rows per matrix product in batch prediction.
const PREDICT_BLOCK: usize = 256;
pub const MODEL_FORMAT: &str = "gpd-svm";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    /// Defaults to `1 / dim`.
    pub gamma: Option<f64>,
    pub coef0: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Scale C per class inversely to its frequency.
    pub balance_classes: bool,
    pub cache_mb: usize,
    pub max_iter: Option<usize>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: None,
            coef0: 1.0,
            tol: 1e-3,
            balance_classes: false,
            cache_mb: 256,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub degree: u32,
    pub gamma: f64,
    pub coef0: f64,
}

impl Kernel {
    #[inline]
    pub fn eval(&self, a: &[f32], b: &[f32]) -> f64 {
        self.from_dot(dot(a, b))
    }

    #[inline]
    pub fn from_dot(&self, d: f64) -> f64 {
        (self.gamma * d + self.coef0).powi(self.degree as i32)
    }
}

/// Dot product with eight independent lanes so the loop vectorizes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (*x as f64) * (*y as f64))
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().map(|&v| v as f64).sum::<f64>() + tail
}

/// Per-dimension min-max scaling to `[0, 1]` on the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f32>]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            for (k, &v) in r.iter().enumerate() {
                lo[k] = lo[k].min(v as f64);
                hi[k] = hi[k].max(v as f64);
            }
        }
        let range = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
        Self { min: lo, range }
    }

    /// Constant training dimensions map to 0.
    pub fn transform(&self, row: &[f32]) -> Vec<f32> {
        row.iter()
            .zip(self.min.iter().zip(&self.range))
            .map(|(&v, (&m, &r))| if r > 0.0 { ((v as f64 - m) / r) as f32 } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub scaler: Scaler,
    pub bias: f64,
    /// Signed dual coefficients `y_i alpha_i`.
    pub coef: Vec<f64>,
    /// Scaled support vectors, one per coefficient.
    pub support: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: i8,
    pub score: f64,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.scaler.min.len()
    }

    pub fn predict(&self, row: &[f32]) -> Result<Prediction> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: row.len(),
            });
        }
        let x = self.scaler.transform(row);
        let score = self.decision_scaled(&x);
        Ok(Prediction {
            label: if score >= 0.0 { 1 } else { -1 },
            score,
        })
    }

    fn decision_scaled(&self, x: &[f32]) -> f64 {
        self.coef
            .iter()
            .zip(&self.support)
            .map(|(c, s)| c * self.kernel.eval(s, x))
            .sum::<f64>()
            + self.bias
    }

    /// Predicts many rows with blocked matrix products. Scores agree with
    /// [`SvmModel::predict`] up to f32 summation order.
    pub fn predict_batch(&self, rows: &[Vec<f32>]) -> Result<Vec<Prediction>> {
        let dim = self.dim();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        let sv = DMatrix::from_fn(self.support.len(), dim, |i, j| self.support[i][j]);
        let blocks: Vec<Vec<Prediction>> = rows
            .par_chunks(PREDICT_BLOCK)
            .map(|block| {
                let mut xs = Vec::with_capacity(block.len() * dim);
                for r in block {
                    xs.extend(self.scaler.transform(r));
                }
                let x = DMatrix::from_vec(dim, block.len(), xs);
                let k = &sv * &x;
                (0..block.len())
                    .map(|j| {
                        let score = self
                            .coef
                            .iter()
                            .enumerate()
                            .map(|(i, c)| c * self.kernel.from_dot(k[(i, j)] as f64))
                            .sum::<f64>()
                            + self.bias;
                        Prediction {
                            label: if score >= 0.0 { 1 } else { -1 },
                            score,
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(blocks.into_iter().flatten().collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let dim = self.dim();
        let mut bytes = Vec::with_capacity(self.support.len() * dim * 4);
        for s in &self.support {
            for v in s {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kernel: self.kernel,
            bias: self.bias,
            dim,
            n_support: self.support.len(),
            coef: self.coef.clone(),
            scale_min: self.scaler.min.clone(),
            scale_range: self.scaler.range.clone(),
            support_vectors: B64.encode(bytes),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text)?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(Error::Model(format!("{} v{}", f.format, f.version)));
        }
        let bytes = B64
            .decode(f.support_vectors.as_bytes())
            .map_err(|e| Error::Model(e.to_string()))?;
        if bytes.len() != f.n_support * f.dim * 4
            || f.coef.len() != f.n_support
            || f.scale_min.len() != f.dim
            || f.scale_range.len() != f.dim
        {
            return Err(Error::Model("inconsistent sizes".into()));
        }
        let support = bytes
            .chunks_exact(f.dim.max(1) * 4)
            .take(f.n_support)
            .map(|c| c.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
            .collect();
        Ok(Self {
            kernel: f.kernel,
            scaler: Scaler {
                min: f.scale_min,
                range: f.scale_range,
            },
            bias: f.bias,
            coef: f.coef,
            support,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    kernel: Kernel,
    bias: f64,
    dim: usize,
    n_support: usize,
    coef: Vec<f64>,
    scale_min: Vec<f64>,
    scale_range: Vec<f64>,
    /// Row-major little-endian f32, base64.
    support_vectors: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub converged: bool,
    /// Final dual objective `1/2 a'Qa - e'a`.
    pub objective: f64,
    /// No working-set step increased the objective.
    pub objective_monotone: bool,
    /// Unsigned dual variables for every training row.
    pub alpha: Vec<f64>,
    pub n_support: usize,
    pub n_bounded: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// Lazily computed kernel rows with FIFO eviction.
struct KernelCache<'a> {
    x: &'a [Vec<f32>],
    kernel: Kernel,
    rows: HashMap<usize, Arc<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [Vec<f32>], kernel: Kernel, cache_mb: usize) -> Self {
        let n = x.len().max(1);
        let capacity = ((cache_mb << 20) / (n * 8)).max(2);
        Self {
            x,
            kernel,
            rows: HashMap::new(),
            order: VecDeque::new(),
            capacity,
        }
    }

    fn row(&mut self, i: usize) -> Arc<Vec<f64>> {
        if let Some(r) = self.rows.get(&i) {
            return r.clone();
        }
        let xi = &self.x[i];
        let k = self.kernel;
        let row: Vec<f64> = self.x.par_iter().map(|xt| k.eval(xi, xt)).collect();
        let row = Arc::new(row);
        if self.rows.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows.remove(&old);
            }
        }
        self.rows.insert(i, row.clone());
        self.order.push_back(i);
        row
    }
}

fn check_training_input(rows: &[Vec<f32>], labels: &[i8], cfg: &SvmConfig) -> Result<usize> {
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    if !(cfg.c > 0.0) || !cfg.c.is_finite() {
        return Err(Error::invalid(format!("C must be positive, got {}", cfg.c)));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    if let Some(g) = cfg.gamma {
        if !(g > 0.0) {
            return Err(Error::invalid("gamma must be positive"));
        }
    }
    if labels.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    let dim = rows.first().map_or(0, |r| r.len());
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: r.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if rows.len() < 2 || pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    Ok(dim)
}

/// Trains on raw (unscaled) descriptor rows with labels in {+1, -1}.
pub fn train(rows: &[Vec<f32>], labels: &[i8], cfg: &SvmConfig) -> Result<(SvmModel, TrainReport)> {
    let dim = check_training_input(rows, labels, cfg)?;
    let scaler = Scaler::fit(rows);
    let x: Vec<Vec<f32>> = rows.iter().map(|r| scaler.transform(r)).collect();
    let kernel = Kernel {
        degree: 3,
        gamma: cfg.gamma.unwrap_or(1.0 / dim.max(1) as f64),
        coef0: cfg.coef0,
    };
    let n = x.len();
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = n - positives;
    let (cp, cn) = if cfg.balance_classes {
        (
            cfg.c * n as f64 / (2.0 * positives as f64),
            cfg.c * n as f64 / (2.0 * negatives as f64),
        )
    } else {
        (cfg.c, cfg.c)
    };
    let cap: Vec<f64> = y.iter().map(|&v| if v > 0.0 { cp } else { cn }).collect();
    let qd: Vec<f64> = x.iter().map(|xi| kernel.eval(xi, xi)).collect();

    let mut cache = KernelCache::new(&x, kernel, cfg.cache_mb);
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut objective = 0.0f64;
    let mut monotone = true;
    let max_iter = cfg.max_iter.unwrap_or((100 * n).max(10_000_000));
    let mut iterations = 0;
    let mut converged = false;

    let is_up = |t: usize, a: &[f64]| if y[t] > 0.0 { a[t] < cap[t] } else { a[t] > 0.0 };
    let is_low = |t: usize, a: &[f64]| if y[t] > 0.0 { a[t] > 0.0 } else { a[t] < cap[t] };

    while iterations < max_iter {
        // First index: maximal violation.
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if is_up(t, &alpha) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if is_low(t, &alpha) {
                gmin = gmin.min(-y[t] * grad[t]);
            }
        }
        if i == usize::MAX || gmax - gmin < cfg.tol {
            converged = true;
            break;
        }
        // Second index: largest guaranteed decrease.
        let ki = cache.row(i);
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !is_low(t, &alpha) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let mut a = qd[i] + qd[t] - 2.0 * ki[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let v = -(b * b) / a;
                if v <= best {
                    best = v;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            converged = true;
            break;
        }
        let kj = cache.row(j);
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (ci, cj) = (cap[i], cap[j]);
        let kij = ki[j];
        if y[i] != y[j] {
            let mut quad = qd[i] + qd[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = qd[i] + qd[j] - 2.0 * kij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        // Q_ij = y_i y_j K_ij.
        let qij = y[i] * y[j] * kij;
        let step = grad[i] * di + grad[j] * dj + 0.5 * (qd[i] * di * di + qd[j] * dj * dj) + qij * di * dj;
        if step > 1e-12 * (1.0 + objective.abs()) {
            monotone = false;
        }
        objective += step;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    // Bias from free vectors, else midpoint of the feasible interval.
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= cap[t];
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };

    let mut coef = Vec::new();
    let mut support = Vec::new();
    let mut n_bounded = 0;
    for t in 0..n {
        if alpha[t] > 0.0 {
            coef.push(y[t] * alpha[t]);
            support.push(x[t].clone());
            if alpha[t] >= cap[t] {
                n_bounded += 1;
            }
        }
    }
    let report = TrainReport {
        iterations,
        converged,
        objective: 0.5 * (0..n).map(|t| alpha[t] * (grad[t] - 1.0)).sum::<f64>(),
        objective_monotone: monotone,
        n_support: coef.len(),
        n_bounded,
        alpha,
        positives,
        negatives,
    };
    Ok((
        SvmModel {
            kernel,
            scaler,
            bias: -rho,
            coef,
            support,
        },
        report,
    ))
}

pub fn predict(m: &SvmModel, row: &[f32]) -> Result<Prediction> {
    m.predict(row)
}

/// Counts with positive as the reference class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, truth: i8, pred: i8) {
        match (truth, pred) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fn_ += 1,
            (_, 1) => self.fp += 1,
            _ => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    fn merge(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Pooled accuracy over all held-out rows.
    pub accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub confusion: Confusion,
}

/// Seeded stratified fold index for every row.
pub fn stratified_folds(labels: &[i8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0usize; labels.len()];
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    let smallest = pos.len().min(neg.len());
    if folds > smallest {
        return Err(Error::TooManyFolds { folds, smallest });
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    for (k, &i) in pos.iter().enumerate() {
        assign[i] = k % folds;
    }
    // Continue the rotation so fold sizes stay balanced overall.
    for (k, &i) in neg.iter().enumerate() {
        assign[i] = (pos.len() + k) % folds;
    }
    Ok(assign)
}

pub fn cross_validate(rows: &[Vec<f32>], labels: &[i8], folds: usize, seed: u64, cfg: &SvmConfig) -> Result<CvReport> {
    check_training_input(rows, labels, cfg)?;
    let assign = stratified_folds(labels, folds, seed)?;
    let per_fold: Vec<Result<Confusion>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let (mut tr_x, mut tr_y, mut te_x, mut te_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..rows.len() {
                if assign[i] == f {
                    te_x.push(rows[i].clone());
                    te_y.push(labels[i]);
                } else {
                    tr_x.push(rows[i].clone());
                    tr_y.push(labels[i]);
                }
            }
            let (model, _) = train(&tr_x, &tr_y, cfg)?;
            let mut conf = Confusion::default();
            for (x, &t) in te_x.iter().zip(&te_y) {
                conf.add(t, model.predict(x)?.label);
            }
            Ok(conf)
        })
        .collect();
    let mut confusion = Confusion::default();
    let mut fold_accuracies = Vec::with_capacity(folds);
    for c in per_fold {
        let c = c?;
        fold_accuracies.push(c.accuracy());
        confusion.merge(&c);
    }
    Ok(CvReport {
        accuracy: confusion.accuracy(),
        fold_accuracies,
        confusion,
    })
}
