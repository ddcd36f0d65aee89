//! Dimension reduction applied to episode features before the path solve.
//! Classifiers always see the unreduced features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IciError, Result};
use crate::linalg::{fix_column_signs, sorted_svd, sym_eigen_ascending};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceMethod {
    Lle,
    Pca,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFeatures {
    pub z: DMatrix<f64>,
    pub method: ReduceMethod,
    pub d: usize,
}

pub const DEFAULT_LLE_NEIGHBORS: usize = 5;
pub const DEFAULT_LLE_REG: f64 = 1e-3;

/// Indices of the `k` nearest neighbours of every row (self excluded).
/// Ties are broken by the lower index.
pub fn nearest_neighbors(x: &DMatrix<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((x.row(i) - x.row(j)).norm_squared(), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Dense n x n reconstruction weight matrix; row i is supported on the
/// neighbours of point i and sums to one.
pub fn lle_weights(x: &DMatrix<f64>, k: usize, reg: f64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if k == 0 || k >= n {
        return Err(IciError::param(format!(
            "LLE needs 1 <= k < n (k={k}, n={n})"
        )));
    }
    let neighbors = nearest_neighbors(x, k);
    let mut w = DMatrix::zeros(n, n);
    for (i, nbrs) in neighbors.iter().enumerate() {
        let z = DMatrix::from_fn(k, x.ncols(), |r, c| x[(nbrs[r], c)] - x[(i, c)]);
        let mut g = &z * z.transpose();
        let trace = g.trace();
        let ridge = if trace > 0.0 { reg * trace / k as f64 } else { reg };
        for d in 0..k {
            g[(d, d)] += ridge;
        }
        let ones = DVector::from_element(k, 1.0);
        let sol = match g.clone().cholesky() {
            Some(ch) => ch.solve(&ones),
            None => g
                .lu()
                .solve(&ones)
                .ok_or_else(|| IciError::Fit("singular LLE Gram matrix".into()))?,
        };
        let total = sol.sum();
        for (r, &j) in nbrs.iter().enumerate() {
            w[(i, j)] = sol[r] / total;
        }
    }
    Ok(w)
}

/// `M = (I - W)^T (I - W)`.
pub fn lle_cost_matrix(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let a = DMatrix::<f64>::identity(n, n) - w;
    let m = a.transpose() * &a;
    (&m + m.transpose()) * 0.5
}

pub fn lle_fit_transform(x: &DMatrix<f64>, d: usize, k: usize, reg: f64) -> Result<ReducedFeatures> {
    let n = x.nrows();
    if n < 2 || k + 1 > n {
        return Err(IciError::param(format!(
            "LLE needs n >= k + 1 >= 2 (k={k}, n={n})"
        )));
    }
    if d == 0 || d > n - 1 || d > x.ncols() {
        return Err(IciError::param(format!(
            "LLE target dimension {d} must lie in 1..=min(D, n-1)"
        )));
    }
    let w = lle_weights(x, k, reg)?;
    let m = lle_cost_matrix(&w);
    let (_, vectors) = sym_eigen_ascending(&m);
    let scale = (n as f64).sqrt();
    let mut z = vectors.columns(1, d).into_owned() * scale;
    fix_column_signs(&mut z);
    Ok(ReducedFeatures {
        z,
        method: ReduceMethod::Lle,
        d,
    })
}

pub fn pca_fit_transform(x: &DMatrix<f64>, d: usize) -> Result<ReducedFeatures> {
    let (n, dim) = x.shape();
    if d > n.min(dim) {
        return Err(IciError::param(format!(
            "PCA target dimension {d} exceeds min(n, D) = {}",
            n.min(dim)
        )));
    }
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let svd = sorted_svd(&centered);
    let mut components = svd.v.columns(0, d).into_owned();
    fix_column_signs(&mut components);
    Ok(ReducedFeatures {
        z: centered * components,
        method: ReduceMethod::Pca,
        d,
    })
}

/// Dispatch on `method`, clamping `d` to what the data supports.
pub fn reduce(x: &DMatrix<f64>, method: ReduceMethod, d: usize, k: usize, reg: f64) -> Result<ReducedFeatures> {
    let n = x.nrows();
    match method {
        ReduceMethod::None => Ok(ReducedFeatures {
            z: x.clone(),
            method,
            d: x.ncols(),
        }),
        ReduceMethod::Pca => pca_fit_transform(x, d.min(n).min(x.ncols())),
        ReduceMethod::Lle => {
            let k = k.min(n.saturating_sub(1)).max(1);
            let d = d.min(n.saturating_sub(1)).min(x.ncols()).max(1);
            lle_fit_transform(x, d, k, reg)
        }
    }
}
