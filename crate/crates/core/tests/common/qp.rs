//! Dense primal-dual interior-point solver for the soft-margin SVM dual,
//! independent of the SMO implementation under test.

use nalgebra::{DMatrix, DVector};

pub struct QpSolution {
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub bias: f64,
}

/// Min-max scaling to [0, 1] fitted in f64 on training rows.
pub struct MinMax {
    lo: Vec<f64>,
    range: Vec<f64>,
}

impl MinMax {
    pub fn fit(rows: &[Vec<f32>]) -> Self {
        let dim = rows[0].len();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            for k in 0..dim {
                lo[k] = lo[k].min(r[k] as f64);
                hi[k] = hi[k].max(r[k] as f64);
            }
        }
        let range = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
        Self { lo, range }
    }

    pub fn apply(&self, r: &[f32]) -> Vec<f64> {
        (0..r.len())
            .map(|k| if self.range[k] > 0.0 { (r[k] as f64 - self.lo[k]) / self.range[k] } else { 0.0 })
            .collect()
    }
}

pub fn cubic(a: &[f64], b: &[f64], gamma: f64, coef0: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (gamma * d + coef0).powi(3)
}

/// Solves min 1/2 a'Qa - e'a s.t. y'a = 0, 0 <= a <= c with Q_ij = y_i y_j K_ij.
pub fn solve_dual(k: &DMatrix<f64>, y: &[f64], c: f64) -> QpSolution {
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * k[(i, j)]);
    let mut a = DVector::from_element(n, c / 2.0);
    let mut z = DVector::from_element(n, 1.0);
    let mut s = DVector::from_element(n, 1.0);
    let mut nu = 0.0;
    for _ in 0..200 {
        let slack = a.map(|v| c - v);
        let rd = &q * &a - DVector::from_element(n, 1.0) + &yv * nu - &z + &s;
        let rp = yv.dot(&a);
        let gap = a.dot(&z) + slack.dot(&s);
        if gap < 1e-13 * n as f64 && rd.norm() < 1e-11 && rp.abs() < 1e-11 {
            break;
        }
        let mu = 0.1 * gap / (2 * n) as f64;
        let mut m = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = q[(i, j)];
            }
            m[(i, i)] += z[i] / a[i] + s[i] / slack[i];
            m[(i, n)] = y[i];
            m[(n, i)] = y[i];
            rhs[i] = -rd[i] + mu / a[i] - z[i] - mu / slack[i] + s[i];
        }
        rhs[n] = -rp;
        let sol = m.lu().solve(&rhs).expect("KKT system is nonsingular");
        let da = sol.rows(0, n).into_owned();
        let dnu = sol[n];
        let dz = DVector::from_fn(n, |i, _| (mu - a[i] * z[i] - z[i] * da[i]) / a[i]);
        let ds = DVector::from_fn(n, |i, _| (mu - s[i] * slack[i] + s[i] * da[i]) / slack[i]);
        let mut step: f64 = 1.0;
        for i in 0..n {
            if da[i] < 0.0 {
                step = step.min(-a[i] / da[i]);
            }
            if da[i] > 0.0 {
                step = step.min(slack[i] / da[i]);
            }
            if dz[i] < 0.0 {
                step = step.min(-z[i] / dz[i]);
            }
            if ds[i] < 0.0 {
                step = step.min(-s[i] / ds[i]);
            }
        }
        let step = (0.99 * step).min(1.0);
        a += &da * step;
        z += &dz * step;
        s += &ds * step;
        nu += dnu * step;
    }
    let objective = 0.5 * a.dot(&(&q * &a)) - a.sum();
    // At a free vector y_i (Qa)_i - y_i + nu = 0, so f(x_i) = y_i needs b = nu.
    let bias = nu;
    QpSolution {
        alpha: a.iter().copied().collect(),
        objective,
        bias,
    }
}

pub fn decision(sol: &QpSolution, x: &[Vec<f64>], y: &[f64], q: &[f64], gamma: f64, coef0: f64) -> f64 {
    (0..x.len())
        .map(|i| y[i] * sol.alpha[i] * cubic(&x[i], q, gamma, coef0))
        .sum::<f64>()
        + sol.bias
}
