//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Default relative cutoff for singular values: `1e-10 * max(n, d)`.
pub fn default_rcond(n: usize, d: usize) -> f64 {
    1e-10 * n.max(d).max(1) as f64
}

/// Thin SVD pieces with singular values sorted descending.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(x: &DMatrix<f64>) -> SortedSvd {
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    let singular_values = DVector::from_iterator(order.len(), order.iter().map(|&i| sv[i]));
    SortedSvd {
        u,
        singular_values,
        v,
    }
}

/// Number of singular values kept under the relative cutoff `rcond * sigma_max`.
pub fn numerical_rank(singular_values: &DVector<f64>, rcond: f64) -> usize {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    if smax <= 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rcond * smax).count()
}

/// Moore-Penrose pseudo-inverse through a truncated SVD.
pub fn pinv(x: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let svd = sorted_svd(x);
    let rank = numerical_rank(&svd.singular_values, rcond);
    let mut out = DMatrix::zeros(x.ncols(), x.nrows());
    for k in 0..rank {
        let s = svd.singular_values[k];
        let v = svd.v.column(k);
        let u = svd.u.column(k);
        out += (v * u.transpose()) / s;
    }
    out
}

/// Orthonormal basis of the column space of `x` (n x rank).
pub fn range_basis(x: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let svd = sorted_svd(x);
    let rank = numerical_rank(&svd.singular_values, rcond);
    svd.u.columns(0, rank).into_owned()
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen_ascending(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Flip each column so that its largest-magnitude entry is positive.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Numerically stable `log(sum(exp(row)))`.
pub fn log_sum_exp(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Index of the maximum entry; ties resolve to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}
