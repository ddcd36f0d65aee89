//! Linear-regression ICI: annihilator projection, lambda grid, block
//! coordinate descent along the regularization path, and vanish-point
//! ranking.
//!
//! With `H = X (X^T X)^+ X^T` and `Xt = I - H`, eliminating the regression
//! coefficients leaves the multi-response problem
//!
//! ```text
//! min_gamma  1/2 ||Xt Y - Xt gamma||_F^2 + lambda R(gamma)
//! ```
//!
//! where `R` is either the elementwise l1 norm or the sum of row l2 norms.
//! Rows of `gamma` that stay at zero down to small `lambda` belong to
//! instances the linear model explains well under their (pseudo-)label.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IciError, Result};
use crate::linalg::{default_rcond, numerical_rank, pinv, soft_threshold, sorted_svd};

pub const DEFAULT_GRID_COUNT: usize = 100;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// Sum of absolute values of every entry.
    L1,
    /// Sum of row l2 norms; rows vanish as a whole.
    GroupL2,
}

impl Penalty {
    pub fn value(self, m: &DMatrix<f64>) -> f64 {
        match self {
            Penalty::L1 => m.iter().map(|v| v.abs()).sum(),
            Penalty::GroupL2 => m.row_iter().map(|r| r.norm()).sum(),
        }
    }
}

/// The projector `Xt = I - X (X^T X)^+ X^T` onto the orthogonal complement
/// of the feature column space.
#[derive(Debug, Clone)]
pub struct Annihilator {
    pub xtilde: DMatrix<f64>,
    pub rank_x: usize,
    pub rcond: f64,
}

impl Annihilator {
    pub fn n(&self) -> usize {
        self.xtilde.nrows()
    }

    /// `Xt * Y`.
    pub fn project(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        &self.xtilde * y
    }
}

/// Build the annihilator. Singular values below `rcond * sigma_max` are
/// truncated; `None` selects `1e-10 * max(n, d)`.
pub fn annihilator(x: &DMatrix<f64>, rcond: Option<f64>) -> Annihilator {
    let (n, d) = x.shape();
    let rcond = rcond.unwrap_or_else(|| default_rcond(n, d));
    let svd = sorted_svd(x);
    let rank = numerical_rank(&svd.singular_values, rcond);
    let u = svd.u.columns(0, rank);
    let h = &u * u.transpose();
    let mut xtilde = DMatrix::<f64>::identity(n, n) - h;
    // Symmetrize away rounding so the solver sees an exact projector shape.
    xtilde = (&xtilde + xtilde.transpose()) * 0.5;
    Annihilator {
        xtilde,
        rank_x: rank,
        rcond,
    }
}

/// `max_i ||Xt[:, i]^T Yt||_2 / n`, the sample-averaged form of the
/// largest penalty that keeps every row of `gamma` at zero.
///
/// The solvers in this module use the unaveraged objective, whose exact
/// threshold is [`zero_threshold`] (`n` times this value for the group
/// penalty).
pub fn lambda_max(ann: &Annihilator, y: &DMatrix<f64>) -> f64 {
    let n = ann.n();
    if n == 0 {
        return 0.0;
    }
    let yt = ann.project(y);
    let corr = ann.xtilde.transpose() * yt;
    corr.row_iter().map(|r| r.norm()).fold(0.0, f64::max) / n as f64
}

/// Smallest `lambda` at which `gamma = 0` solves the path problem: the dual
/// norm of `Xt^T Yt` (largest row norm for the group penalty, largest
/// absolute entry for l1).
pub fn zero_threshold(ann: &Annihilator, y: &DMatrix<f64>, penalty: Penalty) -> f64 {
    // Same arithmetic as the first coordinate step from zero, so the solver
    // sees every row exactly at or below the threshold.
    let corr = &ann.xtilde * y;
    match penalty {
        Penalty::GroupL2 => (0..corr.nrows())
            .map(|i| block_norm(corr.row(i).iter().copied()))
            .fold(0.0, f64::max),
        Penalty::L1 => corr.iter().map(|v| v.abs()).fold(0.0, f64::max),
    }
}

fn block_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Strictly descending positive penalty values.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    /// `count` geometric points from `max` down to `max * ratio`.
    pub fn geometric(max: f64, count: usize, ratio: f64) -> Result<Self> {
        if !(max > 0.0) || !max.is_finite() {
            return Err(IciError::param(format!("grid maximum must be positive, got {max}")));
        }
        if count == 0 {
            return Err(IciError::param("grid needs at least one point"));
        }
        if !(ratio > 0.0 && ratio < 1.0) && count > 1 {
            return Err(IciError::param(format!("grid ratio must lie in (0, 1), got {ratio}")));
        }
        let values = if count == 1 {
            vec![max]
        } else {
            (0..count)
                .map(|k| max * ratio.powf(k as f64 / (count - 1) as f64))
                .collect()
        };
        Ok(LambdaGrid { values })
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|&v| !(v > 0.0)) {
            return Err(IciError::param("grid values must be positive"));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(IciError::param("grid values must be strictly descending"));
        }
        Ok(LambdaGrid { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    pub fn min(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn ratio(&self) -> f64 {
        self.min() / self.max()
    }
}

/// Geometric grid starting at the exact zero threshold of this problem.
pub fn default_grid(ann: &Annihilator, y: &DMatrix<f64>, penalty: Penalty, count: usize, ratio: f64) -> Result<LambdaGrid> {
    let top = zero_threshold(ann, y, penalty).max(1e-12);
    LambdaGrid::geometric(top, count, ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop when the largest coordinate change in a sweep drops below this
    /// and the KKT conditions hold to `10 * tol`.
    pub tol: f64,
    /// Maximum sweeps per lambda.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl SolverOptions {
    pub fn zero_tol(&self) -> f64 {
        10.0 * self.tol
    }
}

#[derive(Debug, Clone)]
pub struct LambdaSolution {
    pub gamma: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after every sweep.
    pub objectives: Vec<f64>,
}

/// `1/2 ||Xt (Y - gamma)||_F^2 + lambda R(gamma)`.
pub fn objective(ann: &Annihilator, y: &DMatrix<f64>, gamma: &DMatrix<f64>, lambda: f64, penalty: Penalty) -> f64 {
    let r = &ann.xtilde * (y - gamma);
    0.5 * r.norm_squared() + lambda * penalty.value(gamma)
}

/// Residual of the stationarity conditions at a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// Largest absolute entry of `grad + lambda * subgrad` over nonzero
    /// blocks.
    pub active_residual: f64,
    /// Largest relative excess `||grad_block||_* / lambda - 1` over zero
    /// blocks (absolute excess when `lambda` is zero).
    pub inactive_excess: f64,
}

impl KktReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.active_residual <= tol && self.inactive_excess <= tol
    }
}

fn kkt_from_gradient(grad: &DMatrix<f64>, gamma: &DMatrix<f64>, lambda: f64, penalty: Penalty) -> KktReport {
    let mut active = 0.0f64;
    let mut excess = 0.0f64;
    let rel = |g: f64| {
        if lambda > 0.0 {
            g / lambda - 1.0
        } else {
            g
        }
    };
    match penalty {
        Penalty::GroupL2 => {
            for i in 0..gamma.nrows() {
                let row = gamma.row(i);
                let norm = row.norm();
                if norm > 0.0 {
                    for j in 0..gamma.ncols() {
                        let r = grad[(i, j)] + lambda * row[j] / norm;
                        active = active.max(r.abs());
                    }
                } else {
                    excess = excess.max(rel(grad.row(i).norm()));
                }
            }
        }
        Penalty::L1 => {
            for (g, &v) in grad.iter().zip(gamma.iter()) {
                if v != 0.0 {
                    active = active.max((g + lambda * v.signum()).abs());
                } else {
                    excess = excess.max(rel(g.abs()));
                }
            }
        }
    }
    KktReport {
        active_residual: active,
        inactive_excess: excess.max(0.0),
    }
}

/// Check the subgradient optimality conditions of the path problem.
pub fn kkt_check(ann: &Annihilator, y: &DMatrix<f64>, gamma: &DMatrix<f64>, lambda: f64, penalty: Penalty) -> KktReport {
    let grad = &ann.xtilde * (gamma - y);
    kkt_from_gradient(&grad, gamma, lambda, penalty)
}

/// Solve at a single `lambda` by cyclic block coordinate descent.
///
/// The gradient `G = Xt (gamma - Y)` is kept up to date; each row block is
/// minimized exactly because its design column is shared across classes.
pub fn solve_lambda(
    ann: &Annihilator,
    y: &DMatrix<f64>,
    lambda: f64,
    penalty: Penalty,
    opts: &SolverOptions,
    warm: Option<&DMatrix<f64>>,
) -> LambdaSolution {
    let xt = &ann.xtilde;
    let (n, c) = y.shape();
    let mut gamma = warm.cloned().unwrap_or_else(|| DMatrix::zeros(n, c));
    let mut grad = xt * (&gamma - y);
    let mut objectives = Vec::new();
    let mut z = vec![0.0; c];
    let mut delta = vec![0.0; c];
    let loss = |gamma: &DMatrix<f64>, grad: &DMatrix<f64>| {
        // For a projector, ||Xt v||^2 = v^T Xt v = <v, Xt v>.
        0.5 * gamma
            .iter()
            .zip(y.iter())
            .zip(grad.iter())
            .map(|((g, yv), gr)| (g - yv) * gr)
            .sum::<f64>()
    };

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_iter {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for i in 0..n {
            let a = xt[(i, i)];
            let mut changed = false;
            if a <= 1e-12 {
                for j in 0..c {
                    delta[j] = -gamma[(i, j)];
                    changed |= delta[j] != 0.0;
                }
            } else {
                for j in 0..c {
                    z[j] = a * gamma[(i, j)] - grad[(i, j)];
                }
                match penalty {
                    Penalty::GroupL2 => {
                        let norm = block_norm(z.iter().copied());
                        let shrink = if norm > lambda { 1.0 - lambda / norm } else { 0.0 };
                        for j in 0..c {
                            let new = shrink * z[j] / a;
                            delta[j] = new - gamma[(i, j)];
                            changed |= delta[j] != 0.0;
                        }
                    }
                    Penalty::L1 => {
                        for j in 0..c {
                            let new = soft_threshold(z[j], lambda) / a;
                            delta[j] = new - gamma[(i, j)];
                            changed |= delta[j] != 0.0;
                        }
                    }
                }
            }
            if !changed {
                continue;
            }
            let col = xt.column(i);
            for j in 0..c {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                gamma[(i, j)] += dj;
                max_change = max_change.max(dj.abs());
                let mut gcol = grad.column_mut(j);
                gcol.axpy(dj, &col, 1.0);
            }
        }
        objectives.push(loss(&gamma, &grad) + lambda * penalty.value(&gamma));
        if max_change < opts.tol {
            let kkt = kkt_from_gradient(&grad, &gamma, lambda, penalty);
            if kkt.holds(opts.zero_tol()) {
                converged = true;
                break;
            }
        }
    }
    LambdaSolution {
        gamma,
        sweeps,
        converged,
        objectives,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathVariant {
    Linear,
    Logit,
}

impl PathVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PathVariant::Linear => "linear",
            PathVariant::Logit => "logit",
        }
    }
}

/// Solutions over a descending lambda grid.
#[derive(Debug, Clone)]
pub struct GammaPath {
    pub variant: PathVariant,
    pub penalty: Penalty,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<DMatrix<f64>>,
    pub vanish_lambda: Vec<f64>,
    /// `||Yt - Xt gamma||_F` (linear) or the data term (logit) per grid point.
    pub residual_norms: Vec<f64>,
    pub converged: Vec<bool>,
    /// Row norms below this count as zero.
    pub zero_tol: f64,
}

impl GammaPath {
    pub fn n(&self) -> usize {
        self.gammas.first().map_or(0, |g| g.nrows())
    }

    pub fn nonconverged(&self) -> usize {
        self.converged.iter().filter(|&&c| !c).count()
    }

    /// `||gamma_i||_2` at the smallest grid value.
    pub fn final_row_norms(&self) -> Vec<f64> {
        match self.gammas.last() {
            Some(g) => g.row_iter().map(|r| r.norm()).collect(),
            None => Vec::new(),
        }
    }

    pub(crate) fn finish(
        variant: PathVariant,
        penalty: Penalty,
        lambdas: Vec<f64>,
        gammas: Vec<DMatrix<f64>>,
        residual_norms: Vec<f64>,
        converged: Vec<bool>,
        zero_tol: f64,
    ) -> Self {
        let mut path = GammaPath {
            variant,
            penalty,
            lambdas,
            gammas,
            vanish_lambda: Vec::new(),
            residual_norms,
            converged,
            zero_tol,
        };
        path.vanish_lambda = vanish_lambda(&path);
        path
    }
}

/// Solve along `grid` with warm starts.
pub fn solve_path(ann: &Annihilator, y: &DMatrix<f64>, grid: &LambdaGrid, penalty: Penalty, opts: &SolverOptions) -> GammaPath {
    let mut gammas = Vec::with_capacity(grid.count());
    let mut residual_norms = Vec::with_capacity(grid.count());
    let mut converged = Vec::with_capacity(grid.count());
    let mut warm: Option<DMatrix<f64>> = None;
    for &lambda in grid.values() {
        let sol = solve_lambda(ann, y, lambda, penalty, opts, warm.as_ref());
        residual_norms.push((&ann.xtilde * (y - &sol.gamma)).norm());
        converged.push(sol.converged);
        warm = Some(sol.gamma.clone());
        gammas.push(sol.gamma);
    }
    GammaPath::finish(
        PathVariant::Linear,
        penalty,
        grid.values().to_vec(),
        gammas,
        residual_norms,
        converged,
        opts.zero_tol(),
    )
}

/// For each row, the smallest grid value at and above which the row is zero
/// at every grid point. Rows that are already nonzero at the top of the grid
/// get the largest grid value.
pub fn vanish_lambda(path: &GammaPath) -> Vec<f64> {
    let n = path.n();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut value = path.lambdas.first().copied().unwrap_or(0.0);
        for (k, g) in path.gammas.iter().enumerate() {
            if g.row(i).norm() < path.zero_tol {
                value = path.lambdas[k];
            } else {
                break;
            }
        }
        out.push(value);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TieBreak {
    pub residual: f64,
    pub confidence: f64,
    pub index: usize,
}

/// Instances ordered most credible first.
#[derive(Debug, Clone, PartialEq)]
pub struct CredibilityRanking {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    pub tiebreak: Vec<TieBreak>,
}

impl CredibilityRanking {
    /// Sort ascending by score, then ascending residual, then descending
    /// confidence, then ascending index.
    pub fn from_keys(scores: Vec<f64>, residuals: &[f64], confidences: &[f64]) -> Self {
        let n = scores.len();
        let tiebreak: Vec<TieBreak> = (0..n)
            .map(|i| TieBreak {
                residual: residuals.get(i).copied().unwrap_or(0.0),
                confidence: confidences.get(i).copied().unwrap_or(0.0),
                index: i,
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(tiebreak[a].residual.total_cmp(&tiebreak[b].residual))
                .then(tiebreak[b].confidence.total_cmp(&tiebreak[a].confidence))
                .then(a.cmp(&b))
        });
        CredibilityRanking {
            order,
            scores,
            tiebreak,
        }
    }
}

pub fn rank_instances(path: &GammaPath, confidences: &[f64]) -> CredibilityRanking {
    CredibilityRanking::from_keys(path.vanish_lambda.clone(), &path.final_row_norms(), confidences)
}

/// `(X^T X)^+ X^T (Y - gamma)`.
pub fn beta_hat(x: &DMatrix<f64>, y: &DMatrix<f64>, gamma: &DMatrix<f64>, rcond: Option<f64>) -> DMatrix<f64> {
    let rcond = rcond.unwrap_or_else(|| default_rcond(x.nrows(), x.ncols()));
    pinv(x, rcond) * (y - gamma)
}

/// Write `lambda,instance,class,gamma,variant` rows ordered by instance,
/// class, then descending lambda.
pub fn write_path_csv<W: Write>(path: &GammaPath, mut w: W) -> std::io::Result<()> {
    writeln!(w, "lambda,instance,class,gamma,variant")?;
    let c = path.gammas.first().map_or(0, |g| g.ncols());
    for i in 0..path.n() {
        for j in 0..c {
            for (k, g) in path.gammas.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    path.lambdas[k],
                    i,
                    j,
                    g[(i, j)],
                    path.variant.as_str()
                )?;
            }
        }
    }
    Ok(())
}

/// Optional per-instance marks for the vanish companion file.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMark {
    pub selected: bool,
    pub pseudo_label: usize,
    /// `None` when the true label is unknown.
    pub correct: Option<bool>,
}

/// Write `instance,vanish_lambda` (plus `selected,pseudo_label,correct` when
/// marks are given).
pub fn write_vanish_csv<W: Write>(path: &GammaPath, marks: Option<&[InstanceMark]>, mut w: W) -> std::io::Result<()> {
    match marks {
        None => {
            writeln!(w, "instance,vanish_lambda")?;
            for (i, v) in path.vanish_lambda.iter().enumerate() {
                writeln!(w, "{i},{v}")?;
            }
        }
        Some(marks) => {
            writeln!(w, "instance,vanish_lambda,selected,pseudo_label,correct")?;
            for (i, v) in path.vanish_lambda.iter().enumerate() {
                let m = &marks[i];
                let correct = m.correct.map_or(String::new(), |c| c.to_string());
                writeln!(w, "{i},{v},{},{},{correct}", m.selected, m.pseudo_label)?;
            }
        }
    }
    Ok(())
}

/// Row-stacked helper: `gamma` row norms.
pub fn row_norms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.norm()))
}
