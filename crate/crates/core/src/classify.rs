//! Downstream classifiers trained on unreduced features.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IciError, Result};
use crate::linalg::{argmax, softmax_rows};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub proba: Vec<f64>,
}

impl Prediction {
    fn from_proba(proba: Vec<f64>) -> Self {
        Prediction {
            label: argmax(proba.iter().cloned()),
            proba,
        }
    }

    /// Probability assigned to the predicted label.
    pub fn confidence(&self) -> f64 {
        self.proba[self.label]
    }
}

/// Multinomial logistic regression, `softmax(X W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub reg: f64,
    pub trained: bool,
}

impl LinearClassifier {
    pub fn classes(&self) -> usize {
        self.b.len()
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if !self.trained {
            return Err(IciError::Fit("classifier used before training".into()));
        }
        if x.ncols() != self.w.nrows() {
            return Err(IciError::Dimension(format!(
                "classifier expects {} features, got {}",
                self.w.nrows(),
                x.ncols()
            )));
        }
        let mut z = x * &self.w;
        for mut row in z.row_iter_mut() {
            row += self.b.transpose();
        }
        Ok(z)
    }
}

pub fn predict(clf: &LinearClassifier, x: &DMatrix<f64>) -> Result<Vec<Prediction>> {
    let p = softmax_rows(&clf.logits(x)?);
    Ok(p.row_iter()
        .map(|r| Prediction::from_proba(r.iter().cloned().collect()))
        .collect())
}

/// Default l2 strength for `m` training rows.
pub fn default_reg(m: usize) -> f64 {
    1.0 / m.max(1) as f64
}

const LBFGS_MEMORY: usize = 10;
const LBFGS_MAX_ITER: usize = 2_000;
const GRAD_TOL: f64 = 1e-6;

/// Objective `(1/m) sum_i NLL_i + (reg/2) ||W||_F^2` (intercept unpenalized)
/// and its gradient, packed as `[vec(W); b]`.
fn logreg_value_grad(x: &DMatrix<f64>, y: &[usize], c: usize, reg: f64, theta: &DVector<f64>) -> (f64, DVector<f64>) {
    let (m, dim) = x.shape();
    let w = DMatrix::from_column_slice(dim, c, &theta.as_slice()[..dim * c]);
    let b = theta.rows(dim * c, c);
    let mut z = x * &w;
    for mut row in z.row_iter_mut() {
        row += b.transpose();
    }
    let mut value = 0.0;
    let p = softmax_rows(&z);
    for i in 0..m {
        let row = z.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        value += lse - z[(i, y[i])];
    }
    let mf = m as f64;
    value = value / mf + 0.5 * reg * w.norm_squared();
    let mut resid = p;
    for i in 0..m {
        resid[(i, y[i])] -= 1.0;
    }
    resid /= mf;
    let gw = x.transpose() * &resid + &w * reg;
    let gb = resid.row_sum();
    let mut grad = DVector::zeros(dim * c + c);
    grad.rows_mut(0, dim * c).copy_from_slice(gw.as_slice());
    for l in 0..c {
        grad[dim * c + l] = gb[l];
    }
    (value, grad)
}

/// Fit by L-BFGS from a zero start until the gradient norm drops below
/// `1e-6`.
pub fn fit_logreg(x: &DMatrix<f64>, y: &[usize], c: usize, reg: f64) -> Result<LinearClassifier> {
    let (m, dim) = x.shape();
    if m != y.len() {
        return Err(IciError::Dimension(format!("{m} rows but {} labels", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= c) {
        return Err(IciError::LabelRange {
            label: bad,
            class_count: c,
        });
    }
    for class in 0..c {
        if !y.contains(&class) {
            return Err(IciError::Fit(format!("class {class} has no training instances")));
        }
    }
    let size = dim * c + c;
    let mut theta = DVector::zeros(size);
    let (mut f, mut g) = logreg_value_grad(x, y, c, reg, &theta);
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();

    for _ in 0..LBFGS_MAX_ITER {
        if g.norm() < GRAD_TOL {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, yv, rho) in history.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, yv, 1.0);
            alphas.push(a);
        }
        if let Some((s, yv, _)) = history.back() {
            q *= s.dot(yv) / yv.dot(yv);
        } else {
            q /= g.norm().max(1.0);
        }
        for ((s, yv, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let bcoef = rho * yv.dot(&q);
            q.axpy(a - bcoef, s, 1.0);
        }
        let mut dir = -q;
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            dir = -g.clone();
            slope = -g.norm_squared();
            history.clear();
        }

        let mut step = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand = &theta + &dir * step;
            let (fc, gc) = logreg_value_grad(x, y, c, reg, &cand);
            if fc <= f + 1e-4 * step * slope {
                next = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = next else { break };
        let s = &cand - &theta;
        let yv = &gc - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            if history.len() == LBFGS_MEMORY {
                history.pop_front();
            }
            history.push_back((s, yv, 1.0 / sy));
        }
        theta = cand;
        f = fc;
        g = gc;
    }

    Ok(LinearClassifier {
        w: DMatrix::from_column_slice(dim, c, &theta.as_slice()[..dim * c]),
        b: DVector::from_column_slice(&theta.as_slice()[dim * c..]),
        reg,
        trained: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

fn distance(a: nalgebra::DVectorView<f64>, b: nalgebra::DVectorView<f64>, metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => (a - b).norm(),
        Metric::Cosine => {
            let denom = a.norm() * b.norm();
            if denom > 0.0 {
                1.0 - a.dot(&b) / denom
            } else {
                1.0
            }
        }
    }
}

/// Majority vote among the `k` nearest training rows. Vote ties go to the
/// class with the smaller summed distance, then the lower class id.
pub fn fit_predict_knn(
    x_train: &DMatrix<f64>,
    y_train: &[usize],
    x_test: &DMatrix<f64>,
    c: usize,
    k: usize,
    metric: Metric,
) -> Result<Vec<Prediction>> {
    let m = x_train.nrows();
    if m == 0 {
        return Err(IciError::Fit("empty training set".into()));
    }
    if k == 0 || k > m {
        return Err(IciError::param(format!("k={k} must lie in 1..={m}")));
    }
    if x_train.ncols() != x_test.ncols() {
        return Err(IciError::Dimension("train/test feature widths differ".into()));
    }
    let xt = x_train.transpose();
    let xq = x_test.transpose();
    let mut out = Vec::with_capacity(x_test.nrows());
    for t in 0..x_test.nrows() {
        let mut dist: Vec<(f64, usize)> = (0..m)
            .map(|i| (distance(xq.column(t), xt.column(i), metric), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; c];
        let mut summed = vec![0.0; c];
        for &(d, i) in dist.iter().take(k) {
            votes[y_train[i]] += 1;
            summed[y_train[i]] += d;
        }
        let mut best = 0;
        for l in 1..c {
            if votes[l] > votes[best] || (votes[l] == votes[best] && votes[l] > 0 && summed[l] < summed[best]) {
                best = l;
            }
        }
        let proba: Vec<f64> = votes.iter().map(|&v| v as f64 / k as f64).collect();
        out.push(Prediction { label: best, proba });
    }
    Ok(out)
}
