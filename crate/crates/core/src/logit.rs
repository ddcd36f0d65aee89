//! Logistic-regression ICI.
//!
//! The augmented design `Xbar = (X | I)` turns the per-instance offsets
//! `gamma` into ordinary coefficients, so the model is a multinomial logistic
//! regression on `(beta; gamma)` with separate penalties `lambda1 R(beta)` and
//! `lambda2 R(gamma)`, `lambda1 = alpha * lambda2`. The beta penalty is what
//! makes the solution unique: adding a constant to one feature's row of
//! `beta` across all classes leaves every softmax probability unchanged.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{IciError, Result};
use crate::linalg::{log_sum_exp, soft_threshold, softmax_rows};
use crate::path::{GammaPath, LambdaGrid, PathVariant, Penalty, DEFAULT_GRID_COUNT, DEFAULT_GRID_RATIO};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const WEIGHT_FLOOR: f64 = 1e-5;
const INNER_FRACTION: f64 = 1e-3;
const MAX_HALVINGS: usize = 20;
const DIVERGENCE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDesign {
    pub xbar: DMatrix<f64>,
    pub d: usize,
    pub n: usize,
}

pub fn augment_design(x: &DMatrix<f64>) -> AugmentedDesign {
    let (n, d) = x.shape();
    let mut xbar = DMatrix::zeros(n, d + n);
    xbar.columns_mut(0, d).copy_from(x);
    for i in 0..n {
        xbar[(i, d + i)] = 1.0;
    }
    AugmentedDesign { xbar, d, n }
}

/// `X beta + gamma`.
pub fn linear_predictor(x: &DMatrix<f64>, beta: &DMatrix<f64>, gamma: &DMatrix<f64>) -> DMatrix<f64> {
    x * beta + gamma
}

/// Mean negative log-likelihood of the multinomial model.
pub fn data_term(x: &DMatrix<f64>, y: &DMatrix<f64>, beta: &DMatrix<f64>, gamma: &DMatrix<f64>) -> f64 {
    let eta = linear_predictor(x, beta, gamma);
    let n = eta.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let row = eta.row(i);
        let fit: f64 = row.iter().zip(y.row(i).iter()).map(|(e, yv)| e * yv).sum();
        total += log_sum_exp(row.iter().cloned()) - fit;
    }
    total / n as f64
}

#[allow(clippy::too_many_arguments)]
pub fn nll_objective(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
    penalty: Penalty,
) -> f64 {
    data_term(x, y, beta, gamma) + lambda1 * penalty.value(beta) + lambda2 * penalty.value(gamma)
}

/// Gradient of [`data_term`] with respect to `beta` and `gamma`.
pub fn smooth_gradient(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.nrows().max(1) as f64;
    let p = softmax_rows(&linear_predictor(x, beta, gamma));
    let dgamma = (p - y) / n;
    let dbeta = x.transpose() * &dgamma;
    (dbeta, dgamma)
}

/// Largest relative disagreement between [`smooth_gradient`] and central
/// finite differences of [`data_term`] (step `1e-5`).
pub fn gradient_check(x: &DMatrix<f64>, y: &DMatrix<f64>, beta: &DMatrix<f64>, gamma: &DMatrix<f64>) -> f64 {
    const STEP: f64 = 1e-5;
    let (gb, gg) = smooth_gradient(x, y, beta, gamma);
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
    let mut worst = 0.0f64;
    let mut b = beta.clone();
    for k in 0..b.len() {
        let orig = b[k];
        b[k] = orig + STEP;
        let up = data_term(x, y, &b, gamma);
        b[k] = orig - STEP;
        let down = data_term(x, y, &b, gamma);
        b[k] = orig;
        worst = worst.max(rel(gb[k], (up - down) / (2.0 * STEP)));
    }
    let mut g = gamma.clone();
    for k in 0..g.len() {
        let orig = g[k];
        g[k] = orig + STEP;
        let up = data_term(x, y, beta, &g);
        g[k] = orig - STEP;
        let down = data_term(x, y, beta, &g);
        g[k] = orig;
        worst = worst.max(rel(gg[k], (up - down) / (2.0 * STEP)));
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitOptions {
    /// Stop once the Newton decrement of an accepted step falls below
    /// `tol^2` (objective units).
    pub tol: f64,
    /// Newton steps per lambda.
    pub max_outer: usize,
    /// Coordinate sweeps per Newton step.
    pub max_inner: usize,
}

impl Default for LogitOptions {
    fn default() -> Self {
        LogitOptions {
            tol: 1e-6,
            max_outer: 100,
            max_inner: 1_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitPathConfig {
    /// `lambda1 = alpha * lambda2`.
    pub alpha: f64,
    pub grid_count: usize,
    pub grid_ratio: f64,
    pub opts: LogitOptions,
}

impl Default for LogitPathConfig {
    fn default() -> Self {
        LogitPathConfig {
            alpha: DEFAULT_ALPHA,
            grid_count: DEFAULT_GRID_COUNT,
            grid_ratio: DEFAULT_GRID_RATIO,
            opts: LogitOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogitSolution {
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub objective: f64,
    pub outer_iters: usize,
    pub converged: bool,
    /// Step halving could not recover a decrease.
    pub diverged: bool,
}

/// Minimize the penalized likelihood at fixed `(lambda1, lambda2)`.
///
/// Each outer step forms the quadratic approximation of the likelihood at the
/// current probabilities (per-instance softmax Hessian blocks, class weights
/// `p(1-p)` floored at `1e-5`), minimizes the penalized surrogate by
/// coordinate descent over the rows of `(beta; gamma)`, and then backtracks
/// on the true objective.
#[allow(clippy::too_many_arguments)]
pub fn solve_logit(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
    penalty: Penalty,
    opts: &LogitOptions,
    warm: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> LogitSolution {
    solve_inner(x, y, lambda1, Some(lambda2), penalty, opts, warm)
}

/// Objective with `gamma` pinned at zero when `lambda2` is `None`.
fn objective_of(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    lambda1: f64,
    lambda2: Option<f64>,
    penalty: Penalty,
) -> f64 {
    data_term(x, y, beta, gamma)
        + lambda1 * penalty.value(beta)
        + lambda2.map_or(0.0, |l| l * penalty.value(gamma))
}

/// Proximal step for one row given per-class gradients and curvatures.
fn prox_row(row: &mut [f64], grad: &[f64], curv: &[f64], lambda: f64, penalty: Penalty) {
    match penalty {
        Penalty::L1 => {
            for l in 0..row.len() {
                row[l] = if curv[l] > 0.0 {
                    soft_threshold(curv[l] * row[l] - grad[l], lambda) / curv[l]
                } else {
                    0.0
                };
            }
        }
        Penalty::GroupL2 => {
            let h = curv.iter().cloned().fold(0.0, f64::max);
            if h <= 0.0 {
                row.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            let mut norm = 0.0;
            for l in 0..row.len() {
                row[l] -= grad[l] / h;
                norm += row[l] * row[l];
            }
            let norm = norm.sqrt();
            let shrink = if norm > lambda / h { 1.0 - lambda / (h * norm) } else { 0.0 };
            row.iter_mut().for_each(|v| *v *= shrink);
        }
    }
}

/// Softmax ignores a common shift of a coefficient row, so only the penalty
/// sees it. Move every row to its penalty-minimising shift; rows whose
/// optimal shift set contains zero are left untouched.
fn recentre_rows(m: &mut DMatrix<f64>, penalty: Penalty) {
    let c = m.ncols();
    if c < 2 {
        return;
    }
    let mut sorted = vec![0.0; c];
    for mut row in m.row_iter_mut() {
        let shift = match penalty {
            Penalty::GroupL2 => -row.mean(),
            Penalty::L1 => {
                sorted.iter_mut().zip(row.iter()).for_each(|(s, v)| *s = -v);
                sorted.sort_by(f64::total_cmp);
                let (lo, hi) = if c % 2 == 1 {
                    (sorted[c / 2], sorted[c / 2])
                } else {
                    (sorted[c / 2 - 1], sorted[c / 2])
                };
                if lo <= 0.0 && 0.0 <= hi {
                    0.0
                } else if hi < 0.0 {
                    hi
                } else {
                    lo
                }
            }
        };
        if shift != 0.0 {
            row.add_scalar_mut(shift);
        }
    }
}

/// Upper bound on the largest eigenvalue of a symmetric matrix.
fn gershgorin_bound(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn solve_inner(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda1: f64,
    lambda2: Option<f64>,
    penalty: Penalty,
    opts: &LogitOptions,
    warm: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> LogitSolution {
    let (n, d) = x.shape();
    let c = y.ncols();
    let nf = n.max(1) as f64;
    let (mut beta, mut gamma) = match warm {
        Some((b, g)) => (b.clone(), g.clone()),
        None => (DMatrix::zeros(d, c), DMatrix::zeros(n, c)),
    };
    if lambda2.is_none() {
        gamma.fill(0.0);
    }
    let mut obj = objective_of(x, y, &beta, &gamma, lambda1, lambda2, penalty);
    let mut converged = false;
    let mut diverged = false;
    let mut outer = 0;

    let mut grad = vec![0.0; c];
    let mut curv = vec![0.0; c];
    let mut row = vec![0.0; c];
    let mut delta = vec![0.0; c];

    while outer < opts.max_outer {
        outer += 1;
        let p = softmax_rows(&linear_predictor(x, &beta, &gamma));
        let hess: Vec<DMatrix<f64>> = (0..n)
            .map(|i| {
                DMatrix::from_fn(c, c, |a, b| {
                    if a == b {
                        (p[(i, a)] * (1.0 - p[(i, a)])).max(WEIGHT_FLOOR)
                    } else {
                        -p[(i, a)] * p[(i, b)]
                    }
                })
            })
            .collect();
        let beta_blocks: Vec<DMatrix<f64>> = (0..d)
            .map(|k| {
                let mut blk = DMatrix::zeros(c, c);
                for i in 0..n {
                    blk += &hess[i] * (x[(i, k)] * x[(i, k)] / nf);
                }
                blk
            })
            .collect();
        let resid0 = (&p - y) / nf;
        // `f` row i holds H_i times the change in instance i's logits, so the
        // surrogate gradient of a coefficient row with design column `v` is
        // `sum_i v_i (resid0_i + f_i / n)`.
        let mut f = DMatrix::<f64>::zeros(n, c);
        let mut nb = beta.clone();
        let mut ng = gamma.clone();
        // Changes are measured as curvature * change^2 (objective units), so
        // nearly flat directions of a saturated softmax do not hold up
        // convergence. Inexact Newton: the surrogate only needs solving to a
        // fraction of the first sweep's movement.
        let threshold = opts.tol * opts.tol;
        let mut inner_tol = 0.1 * threshold;
        for sweep in 0..opts.max_inner {
            let mut max_change = 0.0f64;
            for k in 0..d {
                let blk = &beta_blocks[k];
                let col = x.column(k);
                let grad_of = |f: &DMatrix<f64>, l: usize| -> f64 {
                    (0..n).map(|i| col[i] * (resid0[(i, l)] + f[(i, l)] / nf)).sum()
                };
                match penalty {
                    Penalty::L1 => {
                        for l in 0..c {
                            let a = blk[(l, l)];
                            let old = nb[(k, l)];
                            let new = if a > 0.0 {
                                soft_threshold(a * old - grad_of(&f, l), lambda1) / a
                            } else {
                                0.0
                            };
                            let delta = new - old;
                            if delta != 0.0 {
                                max_change = max_change.max(a * delta * delta);
                                nb[(k, l)] = new;
                                for i in 0..n {
                                    let s = col[i] * delta;
                                    for m in 0..c {
                                        f[(i, m)] += s * hess[i][(m, l)];
                                    }
                                }
                            }
                        }
                    }
                    Penalty::GroupL2 => {
                        for l in 0..c {
                            grad[l] = grad_of(&f, l);
                            row[l] = nb[(k, l)];
                        }
                        let bound = gershgorin_bound(blk);
                        curv.iter_mut().for_each(|v| *v = bound);
                        prox_row(&mut row, &grad, &curv, lambda1, penalty);
                        for l in 0..c {
                            delta[l] = row[l] - nb[(k, l)];
                            nb[(k, l)] = row[l];
                        }
                        max_change = max_change.max(bound * delta.iter().map(|v| v * v).sum::<f64>());
                        if delta.iter().any(|&v| v != 0.0) {
                            for i in 0..n {
                                for m in 0..c {
                                    f[(i, m)] += col[i] * (0..c).map(|l| hess[i][(m, l)] * delta[l]).sum::<f64>();
                                }
                            }
                        }
                    }
                }
            }
            if let Some(l2) = lambda2 {
                for i in 0..n {
                    let h = &hess[i];
                    match penalty {
                        Penalty::L1 => {
                            for l in 0..c {
                                let a = h[(l, l)] / nf;
                                let old = ng[(i, l)];
                                let g = resid0[(i, l)] + f[(i, l)] / nf;
                                let new = soft_threshold(a * old - g, l2) / a;
                                let delta = new - old;
                                if delta != 0.0 {
                                    max_change = max_change.max(a * delta * delta);
                                    ng[(i, l)] = new;
                                    for m in 0..c {
                                        f[(i, m)] += delta * h[(m, l)];
                                    }
                                }
                            }
                        }
                        Penalty::GroupL2 => {
                            for l in 0..c {
                                grad[l] = resid0[(i, l)] + f[(i, l)] / nf;
                                row[l] = ng[(i, l)];
                            }
                            let bound = gershgorin_bound(h) / nf;
                            curv.iter_mut().for_each(|v| *v = bound);
                            prox_row(&mut row, &grad, &curv, l2, penalty);
                            for l in 0..c {
                                delta[l] = row[l] - ng[(i, l)];
                                ng[(i, l)] = row[l];
                            }
                            max_change = max_change.max(bound * delta.iter().map(|v| v * v).sum::<f64>());
                            for m in 0..c {
                                f[(i, m)] += (0..c).map(|l| h[(m, l)] * delta[l]).sum::<f64>();
                            }
                        }
                    }
                }
            }
            if sweep == 0 {
                inner_tol = inner_tol.max(INNER_FRACTION * max_change);
            }
            if max_change < inner_tol {
                break;
            }
        }

        let db = &nb - &beta;
        let dg = &ng - &gamma;
        // Newton decrement of the full step: sum_i deta_i' H_i deta_i / n.
        let decrement = (x * &db + &dg).dot(&f) / nf;
        let mut t = 1.0;
        let mut accepted = None;
        let mut best_increase = f64::INFINITY;
        for _ in 0..=MAX_HALVINGS {
            let cb = &beta + &db * t;
            let cg = &gamma + &dg * t;
            let cand = objective_of(x, y, &cb, &cg, lambda1, lambda2, penalty);
            if cand <= obj + 1e-15 * obj.abs().max(1.0) {
                accepted = Some((cb, cg, cand));
                break;
            }
            best_increase = best_increase.min(cand - obj);
            t *= 0.5;
        }
        match accepted {
            Some((mut cb, mut cg, _)) => {
                recentre_rows(&mut cb, penalty);
                if lambda2.is_some() {
                    recentre_rows(&mut cg, penalty);
                }
                beta = cb;
                gamma = cg;
                obj = objective_of(x, y, &beta, &gamma, lambda1, lambda2, penalty);
                if t * t * decrement < threshold {
                    converged = true;
                    break;
                }
            }
            None => {
                if best_increase > DIVERGENCE_SLACK {
                    diverged = true;
                } else {
                    converged = true;
                }
                break;
            }
        }
    }

    LogitSolution {
        beta,
        gamma,
        objective: obj,
        outer_iters: outer,
        converged,
        diverged,
    }
}

fn dual_norm(v: &[f64], penalty: Penalty) -> f64 {
    match penalty {
        Penalty::GroupL2 => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
        Penalty::L1 => v.iter().map(|a| a.abs()).fold(0.0, f64::max),
    }
}

/// Largest gamma-gradient dual norm at the gamma-free solution for this
/// `lambda2` (with `lambda1 = alpha * lambda2`).
fn gamma_gradient_bound(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda2: f64, alpha: f64, penalty: Penalty, opts: &LogitOptions) -> f64 {
    let sol = solve_inner(x, y, alpha * lambda2, None, penalty, opts, None);
    let (_, gg) = smooth_gradient(x, y, &sol.beta, &sol.gamma);
    gg.row_iter()
        .map(|r| dual_norm(&r.iter().cloned().collect::<Vec<_>>(), penalty))
        .fold(0.0, f64::max)
}

/// Top of the `lambda2` grid: twice the smallest `lambda2` (found by
/// bisection) at which `gamma = 0` satisfies the optimality conditions.
pub fn logit_lambda_max(x: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64, penalty: Penalty, opts: &LogitOptions) -> f64 {
    let n = x.nrows().max(1) as f64;
    // ||p_i - y_i||_2 <= sqrt(2), so this upper end always keeps gamma at zero.
    let mut hi = 2f64.sqrt() / n;
    let mut lo = 0.0;
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if gamma_gradient_bound(x, y, mid, alpha, penalty, opts) <= mid {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    2.0 * hi
}

pub fn solve_logit_path(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &LogitPathConfig, penalty: Penalty) -> Result<GammaPath> {
    if !(cfg.alpha > 0.0) {
        return Err(IciError::param("alpha must be positive for a unique solution"));
    }
    if x.nrows() != y.nrows() {
        return Err(IciError::Dimension(format!(
            "{} rows in X but {} in Y",
            x.nrows(),
            y.nrows()
        )));
    }
    let top = logit_lambda_max(x, y, cfg.alpha, penalty, &cfg.opts);
    let grid = LambdaGrid::geometric(top, cfg.grid_count, cfg.grid_ratio)?;
    Ok(solve_logit_grid(x, y, &grid, cfg, penalty))
}

/// Path over an explicit `lambda2` grid.
pub fn solve_logit_grid(x: &DMatrix<f64>, y: &DMatrix<f64>, grid: &LambdaGrid, cfg: &LogitPathConfig, penalty: Penalty) -> GammaPath {
    let mut gammas = Vec::with_capacity(grid.count());
    let mut data_terms = Vec::with_capacity(grid.count());
    let mut converged = Vec::with_capacity(grid.count());
    let mut warm: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    for &l2 in grid.values() {
        let sol = solve_logit(
            x,
            y,
            cfg.alpha * l2,
            l2,
            penalty,
            &cfg.opts,
            warm.as_ref().map(|(b, g)| (b, g)),
        );
        data_terms.push(data_term(x, y, &sol.beta, &sol.gamma));
        converged.push(sol.converged && !sol.diverged);
        gammas.push(sol.gamma.clone());
        warm = Some((sol.beta, sol.gamma));
    }
    GammaPath::finish(
        PathVariant::Logit,
        penalty,
        grid.values().to_vec(),
        gammas,
        data_terms,
        converged,
        10.0 * cfg.opts.tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::one_hot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn augmented_design_layout() {
        let z = augment_design(&DMatrix::zeros(3, 2));
        assert_eq!(z.xbar.columns(2, 3).into_owned(), DMatrix::identity(3, 3));
        assert!(z.xbar.columns(0, 2).iter().all(|&v| v == 0.0));
        let a = augment_design(&DMatrix::from_row_slice(2, 1, &[2.0, 3.0]));
        assert_eq!(a.xbar, DMatrix::from_row_slice(2, 3, &[2.0, 1.0, 0.0, 3.0, 0.0, 1.0]));
    }

    #[test]
    fn augmented_product_reproduces_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(6, 3, &mut rng);
        let beta = random(3, 4, &mut rng);
        let gamma = random(6, 4, &mut rng);
        let aug = augment_design(&x);
        let mut stacked = DMatrix::zeros(9, 4);
        stacked.rows_mut(0, 3).copy_from(&beta);
        stacked.rows_mut(3, 6).copy_from(&gamma);
        let diff = &aug.xbar * stacked - linear_predictor(&x, &beta, &gamma);
        assert!(diff.abs().max() < 1e-12);
    }

    #[test]
    fn uniform_softmax_objective_is_log_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(7, 2, &mut rng);
        let y = one_hot(&[0, 1, 2, 0, 1, 2, 0], 3).unwrap().into_inner();
        let v = nll_objective(&x, &y, &DMatrix::zeros(2, 3), &DMatrix::zeros(7, 3), 0.3, 0.2, Penalty::GroupL2);
        assert!((v - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn saturated_logits() {
        let x = DMatrix::zeros(1, 1);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let gamma = DMatrix::from_row_slice(1, 2, &[10.0, -10.0]);
        let v = nll_objective(&x, &y, &DMatrix::zeros(1, 2), &gamma, 0.0, 0.0, Penalty::L1);
        let expected = (-20f64).exp().ln_1p();
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn shifting_a_beta_row_leaves_data_term_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(5, 3, &mut rng);
        let y = one_hot(&[0, 1, 1, 0, 2], 3).unwrap().into_inner();
        let beta = random(3, 3, &mut rng);
        let gamma = random(5, 3, &mut rng);
        let mut shifted = beta.clone();
        for l in 0..3 {
            shifted[(1, l)] += 0.77;
        }
        let a = data_term(&x, &y, &beta, &gamma);
        let b = data_term(&x, &y, &shifted, &gamma);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradient_at_zero_is_uniform_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(4, 2, &mut rng);
        let y = one_hot(&[0, 1, 2, 1], 3).unwrap().into_inner();
        let (gb, gg) = smooth_gradient(&x, &y, &DMatrix::zeros(2, 3), &DMatrix::zeros(4, 3));
        let r = y.map(|v| (1.0 / 3.0 - v) / 4.0);
        assert!((&gg - &r).abs().max() < 1e-15);
        assert!((gb - x.transpose() * r).abs().max() < 1e-15);
    }

    #[test]
    fn duplicated_rows_keep_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(4, 2, &mut rng);
        let y = one_hot(&[0, 1, 2, 1], 3).unwrap().into_inner();
        let beta = random(2, 3, &mut rng);
        let gamma = DMatrix::zeros(4, 3);
        let (gb, _) = smooth_gradient(&x, &y, &beta, &gamma);
        let x2 = DMatrix::from_fn(8, 2, |i, j| x[(i % 4, j)]);
        let y2 = DMatrix::from_fn(8, 3, |i, j| y[(i % 4, j)]);
        let (gb2, _) = smooth_gradient(&x2, &y2, &beta, &DMatrix::zeros(8, 3));
        assert!((gb - gb2).abs().max() < 1e-14);
    }

    #[test]
    fn finite_differences_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(5, 2, &mut rng);
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
        let y = one_hot(&labels, 3).unwrap().into_inner();
        let err = gradient_check(&x, &y, &random(2, 3, &mut rng), &random(5, 3, &mut rng));
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn fully_shrunk_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(6, 2, &mut rng);
        let y = one_hot(&[0, 1, 0, 1, 0, 1], 2).unwrap().into_inner();
        let sol = solve_logit(&x, &y, 10.0, 10.0, Penalty::GroupL2, &LogitOptions::default(), None);
        assert!(sol.gamma.iter().all(|&v| v == 0.0));
        assert!(sol.beta.iter().all(|&v| v == 0.0));
        assert!((sol.objective - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn path_starts_at_zero_gamma_and_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(10, 2, &mut rng);
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let y = one_hot(&labels, 3).unwrap().into_inner();
        let cfg = LogitPathConfig {
            grid_count: 15,
            ..Default::default()
        };
        let path = solve_logit_path(&x, &y, &cfg, Penalty::GroupL2).unwrap();
        assert!(path.gammas[0].iter().all(|&v| v == 0.0));
        assert!(path.gammas.last().unwrap().iter().any(|&v| v != 0.0));
        let sol = solve_logit(&x, &y, 0.01, 0.02, Penalty::GroupL2, &LogitOptions::default(), None);
        let p = softmax_rows(&linear_predictor(&x, &sol.beta, &sol.gamma));
        for r in p.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn alpha_must_be_positive() {
        let x = DMatrix::zeros(3, 1);
        let y = one_hot(&[0, 1, 0], 2).unwrap().into_inner();
        let cfg = LogitPathConfig {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(solve_logit_path(&x, &y, &cfg, Penalty::L1).is_err());
    }

    #[test]
    fn separable_data_is_fit_by_beta_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let x = DMatrix::from_fn(12, 2, |i, j| {
            let s = if labels[i] == 0 { 1.0 } else { -1.0 };
            let base = if j == 0 { 2.0 * s } else { 0.0 };
            base + 0.3 * rng.random::<f64>()
        });
        let y = one_hot(&labels, 2).unwrap().into_inner();
        let sol = solve_logit(&x, &y, 1e-3 * 0.5, 1e-3, Penalty::GroupL2, &LogitOptions::default(), None);
        let eta = &x * &sol.beta;
        for i in 0..12 {
            let pred = crate::linalg::argmax(eta.row(i).iter().cloned());
            assert_eq!(pred, labels[i]);
        }
    }

    #[test]
    fn returned_beta_is_not_improved_by_a_row_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random(9, 2, &mut rng);
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let y = one_hot(&labels, 3).unwrap().into_inner();
        for penalty in [Penalty::L1, Penalty::GroupL2] {
            let sol = solve_logit(&x, &y, 0.01, 0.02, penalty, &LogitOptions::default(), None);
            assert!(sol.converged, "{penalty:?} {}", sol.outer_iters);
            let base = nll_objective(&x, &y, &sol.beta, &sol.gamma, 0.01, 0.02, penalty);
            for k in 0..2 {
                for kappa in [-0.05, -0.01, 0.01, 0.05] {
                    let mut b = sol.beta.clone();
                    for l in 0..3 {
                        b[(k, l)] += kappa;
                    }
                    let v = nll_objective(&x, &y, &b, &sol.gamma, 0.01, 0.02, penalty);
                    assert!(v >= base - 1e-8, "{penalty:?} {v} < {base}");
                }
            }
        }
    }
}
