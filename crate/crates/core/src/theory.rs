//! Identifiability of the linear model in vectorized form.
//!
//! Stacking the classes, `vec(Y) = (I_c ⊗ X) vec(beta) + vec(gamma) + vec(eps)`.
//! With `U2` an orthonormal basis of the complement of `col(X)`, the rows of
//! `Ut = I_c ⊗ U2^T` annihilate the design and the problem reduces to
//!
//! ```text
//! min_gamma  1/2 ||y_u - Ut vec(gamma)||_2^2 + lambda ||vec(gamma)||_1,   y_u = Ut vec(Y)
//! ```
//!
//! which has the same minimizers as the annihilator form solved by
//! [`crate::path`]. The Kronecker factor is never formed: `Ut^T Ut` restricted
//! to one class block is the projector `G = U2 U2^T`, and entries across
//! different classes vanish.
//!
//! Entries of `vec(gamma)` are indexed column-major, `a = l * n + i` for
//! instance `i` and class `l`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classify::default_reg;
use crate::classify::{fit_logreg, predict};
use crate::data::{episode_seed, one_hot, sample_episode, EpisodeSpec, FeatureStore};
use crate::dimreduce::reduce;
use crate::error::{IciError, Result};
use crate::linalg::{default_rcond, numerical_rank, soft_threshold, sorted_svd, sym_eigen_ascending};
use crate::path::beta_hat;
use crate::selftrain::{run_episode, LoopConfig};

/// Penalty used when the noise level is zero and the theorem's bound
/// collapses to zero.
pub const NOISELESS_LAMBDA: f64 = 1e-2;
pub const DEFAULT_HISTOGRAM_BINS: usize = 101;

#[derive(Debug, Clone)]
pub struct VectorizedModel {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub rank: usize,
    /// `n x (n - rank)`, orthonormal columns spanning `col(X)^⊥`.
    pub u2: DMatrix<f64>,
    /// Column `l` is the class-`l` block of `y_u`, i.e. `U2^T Y[:, l]`.
    pub y_u: DMatrix<f64>,
}

impl VectorizedModel {
    /// Rows of `Ut`: `c (n - rank)`.
    pub fn rows(&self) -> usize {
        self.c * self.u2.ncols()
    }

    /// `Ut vec(m)` in the same block layout as `y_u`.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.u2.transpose() * m
    }

    /// `(Ut^T Ut)[a, b]` for vec indices `a`, `b`.
    pub fn gram(&self, a: usize, b: usize) -> f64 {
        let (i, l) = unvec(a, self.n);
        let (j, m) = unvec(b, self.n);
        if l != m {
            return 0.0;
        }
        self.u2.row(i).dot(&self.u2.row(j))
    }

    /// Squared norm of column `a` of `Ut`.
    pub fn column_norm_sq(&self, a: usize) -> f64 {
        self.u2.row(a % self.n).norm_squared()
    }
}

pub fn vec_index(i: usize, l: usize, n: usize) -> usize {
    l * n + i
}

pub fn unvec(a: usize, n: usize) -> (usize, usize) {
    (a % n, a / n)
}

/// Orthonormal basis of `col(X)^⊥` and the numerical rank of `X`.
pub fn null_basis(x: &DMatrix<f64>, rcond: Option<f64>) -> (DMatrix<f64>, usize) {
    let (n, d) = x.shape();
    let rcond = rcond.unwrap_or_else(|| default_rcond(n, d));
    // Padding with n zero columns makes the SVD return the full n x n U.
    let mut padded = DMatrix::zeros(n, d + n);
    padded.columns_mut(0, d).copy_from(x);
    let svd = sorted_svd(&padded);
    let rank = numerical_rank(&svd.singular_values, rcond);
    (svd.u.columns(rank, n - rank).into_owned(), rank)
}

pub fn vectorize(x: &DMatrix<f64>, y: &DMatrix<f64>) -> VectorizedModel {
    let (u2, rank) = null_basis(x, None);
    VectorizedModel {
        n: x.nrows(),
        c: y.ncols(),
        d: x.ncols(),
        rank,
        y_u: u2.transpose() * y,
        u2,
    }
}

/// C1–C3 for a planted support. `None` marks a quantity that is undefined
/// because an earlier condition failed (or the support is empty).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub c_min: Option<f64>,
    pub eta: Option<f64>,
    pub mu: f64,
    pub gamma_min: Option<f64>,
    pub h: Option<f64>,
    pub lambda: f64,
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    /// Planted support `S` as vec indices.
    pub support: Vec<usize>,
    /// Instances with a nonzero planted row, `O`.
    pub wrong: Vec<usize>,
}

/// Entries of `gamma` above `threshold` in absolute value, as vec indices.
pub fn support_of(gamma: &DMatrix<f64>, threshold: f64) -> Vec<usize> {
    let n = gamma.nrows();
    let mut out = Vec::new();
    for l in 0..gamma.ncols() {
        for i in 0..n {
            if gamma[(i, l)].abs() > threshold {
                out.push(vec_index(i, l, n));
            }
        }
    }
    out
}

fn instances_of(support: &[usize], n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = support.iter().map(|&a| a % n).collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn inf_norm_rows(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Evaluate C1 (restricted eigenvalue), C2 (irrepresentability) and C3
/// (large error) at `lambda` for the planted `gamma_star` (n x c).
///
/// C3 compares against `h = lambda eta / sqrt(C_min mu) + lambda ||(Ut_S^T
/// Ut_S)^{-1} sign(gamma*_S)||_inf`, grouping `C_min mu` under one square
/// root as in the displayed condition.
pub fn check_conditions(vm: &VectorizedModel, gamma_star: &DMatrix<f64>, lambda: f64) -> ConditionReport {
    let n = vm.n;
    let support = support_of(gamma_star, 0.0);
    let in_support: Vec<bool> = {
        let mut flags = vec![false; n * vm.c];
        support.iter().for_each(|&a| flags[a] = true);
        flags
    };
    let complement: Vec<usize> = (0..n * vm.c).filter(|&a| !in_support[a]).collect();
    let mu = complement
        .iter()
        .map(|&a| vm.column_norm_sq(a))
        .fold(0.0, f64::max);
    let wrong = instances_of(&support, n);
    let mut report = ConditionReport {
        c_min: None,
        eta: None,
        mu,
        gamma_min: None,
        h: None,
        lambda,
        c1: false,
        c2: false,
        c3: false,
        support: support.clone(),
        wrong,
    };
    if support.is_empty() {
        // Nothing to recover: all three conditions hold vacuously.
        report.eta = Some(1.0);
        report.c1 = true;
        report.c2 = true;
        report.c3 = true;
        return report;
    }

    let s = support.len();
    let kss = DMatrix::from_fn(s, s, |p, q| vm.gram(support[p], support[q]));
    let (vals, _) = sym_eigen_ascending(&kss);
    let c_min = vals[0];
    report.c_min = Some(c_min);
    report.gamma_min = Some(
        support
            .iter()
            .map(|&a| {
                let (i, l) = unvec(a, n);
                gamma_star[(i, l)].abs()
            })
            .fold(f64::INFINITY, f64::min),
    );
    let scale = vals[s - 1].abs().max(1.0);
    if !(c_min > 1e-10 * scale) {
        return report;
    }
    report.c1 = true;
    let Some(inv) = kss.clone().try_inverse() else {
        report.c1 = false;
        return report;
    };
    let kcs = DMatrix::from_fn(complement.len(), s, |p, q| vm.gram(complement[p], support[q]));
    let eta = 1.0 - inf_norm_rows(&(kcs * &inv));
    report.eta = Some(eta);
    report.c2 = eta > 0.0;

    let signs = DMatrix::from_fn(s, 1, |p, _| {
        let (i, l) = unvec(support[p], n);
        gamma_star[(i, l)].signum()
    });
    let tail = (&inv * signs).abs().max();
    if mu > 0.0 {
        let h = lambda * eta / (c_min * mu).sqrt() + lambda * tail;
        report.h = Some(h);
        report.c3 = report.c2 && report.gamma_min.is_some_and(|g| g > h);
    }
    report
}

/// Smallest penalty covered by the identifiability theorem,
/// `2 sigma sqrt(mu) / eta * sqrt(log(c n))`.
pub fn theorem_lambda(sigma: f64, mu: f64, eta: f64, c: usize, n: usize) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(IciError::param(format!("eta must lie in (0, 1], got {eta}")));
    }
    if !(mu > 0.0) {
        return Err(IciError::param(format!("mu must be positive, got {mu}")));
    }
    if !(sigma >= 0.0) {
        return Err(IciError::param("sigma must be >= 0"));
    }
    let cn = (c * n) as f64;
    if cn < 1.0 {
        return Err(IciError::param("c * n must be >= 1"));
    }
    Ok(2.0 * sigma * mu.sqrt() / eta * cn.ln().sqrt())
}

#[derive(Debug, Clone)]
pub struct UtildeSolution {
    pub gamma: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Solve the l1 problem in `Ut` coordinates by cyclic coordinate descent on
/// the `(n - rank)`-dimensional residual of each class block.
pub fn solve_utilde_l1(vm: &VectorizedModel, lambda: f64, tol: f64, max_sweeps: usize) -> UtildeSolution {
    let (n, c) = (vm.n, vm.c);
    let u2 = &vm.u2;
    let diag: Vec<f64> = (0..n).map(|i| u2.row(i).norm_squared()).collect();
    let mut gamma = DMatrix::zeros(n, c);
    let mut sweeps = 0;
    let mut converged = true;
    for l in 0..c {
        let mut resid = vm.y_u.column(l).into_owned();
        let mut done = false;
        let mut local = 0;
        while local < max_sweeps {
            local += 1;
            let mut max_change = 0.0f64;
            for i in 0..n {
                let a = diag[i];
                let old = gamma[(i, l)];
                let new = if a > 1e-12 {
                    let z = a * old + u2.row(i).transpose().dot(&resid);
                    soft_threshold(z, lambda) / a
                } else {
                    0.0
                };
                let delta = new - old;
                if delta != 0.0 {
                    gamma[(i, l)] = new;
                    resid.axpy(-delta, &u2.row(i).transpose(), 1.0);
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < tol {
                done = true;
                break;
            }
        }
        sweeps = sweeps.max(local);
        converged &= done;
    }
    UtildeSolution {
        gamma,
        sweeps,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryOutcome {
    pub s_hat: Vec<usize>,
    pub o_hat: Vec<usize>,
    /// `S_hat ⊆ S`.
    pub no_false_positive: bool,
    /// `S_hat = S` and every sign matches.
    pub sign_consistent: bool,
    /// `O_hat ⊆ O`.
    pub instances_subset: bool,
    /// `||gamma_hat_S - gamma*_S||_inf`.
    pub sup_error: f64,
}

pub fn recovery_outcome(gamma_hat: &DMatrix<f64>, gamma_star: &DMatrix<f64>, threshold: f64) -> RecoveryOutcome {
    let n = gamma_hat.nrows();
    let s = support_of(gamma_star, 0.0);
    let s_hat = support_of(gamma_hat, threshold);
    let o = instances_of(&s, n);
    let o_hat = instances_of(&s_hat, n);
    let no_false_positive = s_hat.iter().all(|a| s.binary_search(a).is_ok());
    let sign_consistent = s_hat == s
        && s.iter().all(|&a| {
            let (i, l) = unvec(a, n);
            gamma_hat[(i, l)].signum() == gamma_star[(i, l)].signum()
        });
    let sup_error = s
        .iter()
        .map(|&a| {
            let (i, l) = unvec(a, n);
            (gamma_hat[(i, l)] - gamma_star[(i, l)]).abs()
        })
        .fold(0.0, f64::max);
    RecoveryOutcome {
        instances_subset: o_hat.iter().all(|i| o.binary_search(i).is_ok()),
        s_hat,
        o_hat,
        no_false_positive,
        sign_consistent,
        sup_error,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialParams {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub flips: usize,
    pub sigma: f64,
    pub tol: f64,
}

impl Default for TrialParams {
    fn default() -> Self {
        TrialParams {
            n: 40,
            d: 4,
            c: 3,
            flips: 2,
            sigma: 0.05,
            tol: 1e-10,
        }
    }
}

impl TrialParams {
    pub fn validate(&self) -> Result<()> {
        if self.c < 2 {
            return Err(IciError::param("c must be >= 2"));
        }
        if self.d < self.c {
            return Err(IciError::param(format!(
                "planted design needs d >= c (d={}, c={})",
                self.d, self.c
            )));
        }
        if self.n <= self.d {
            return Err(IciError::param("n must exceed d"));
        }
        if self.flips >= self.n {
            return Err(IciError::param("flips must be < n"));
        }
        if !(self.sigma >= 0.0) || !(self.tol > 0.0) {
            return Err(IciError::param("sigma must be >= 0 and tol > 0"));
        }
        Ok(())
    }
}

/// A well-specified planted instance.
#[derive(Debug, Clone)]
pub struct PlantedProblem {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub gamma_star: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

/// Draw `X = [Y0 | Z] R` so that the one-hot `Y0` lies exactly in the column
/// space of `X`, then give `flips` rows a wrong label (`gamma*_i = e_wrong -
/// e_true`) and add Gaussian noise of scale `sigma`.
pub fn plant(p: &TrialParams, seed: u64) -> Result<PlantedProblem> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..p.n).map(|i| i % p.c).collect();
    labels.shuffle(&mut rng);
    let y0 = one_hot(&labels, p.c)?.into_inner();
    let mut base = DMatrix::zeros(p.n, p.d);
    base.columns_mut(0, p.c).copy_from(&y0);
    for j in p.c..p.d {
        for i in 0..p.n {
            base[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let mix = DMatrix::from_fn(p.d, p.d, |_, _| StandardNormal.sample(&mut rng));
    let x = base * mix;

    let mut rows: Vec<usize> = (0..p.n).collect();
    rows.shuffle(&mut rng);
    let mut gamma_star = DMatrix::zeros(p.n, p.c);
    for &i in rows.iter().take(p.flips) {
        let shift = rng.random_range(1..p.c);
        let wrong = (labels[i] + shift) % p.c;
        gamma_star[(i, wrong)] = 1.0;
        gamma_star[(i, labels[i])] = -1.0;
    }
    let noise = DMatrix::from_fn(p.n, p.c, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); p.sigma * z });
    let y = &y0 + &gamma_star + &noise;
    Ok(PlantedProblem { x, y, gamma_star, noise })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub seed: u64,
    pub conditions: ConditionReport,
    pub outcome: RecoveryOutcome,
    /// `||gamma_hat_S - gamma*_S||_inf <= h`, when `h` is defined.
    pub within_h: Option<bool>,
    pub converged: bool,
}

/// One planted trial solved at the theorem's penalty. When C2 fails the
/// theorem gives no penalty; `eta = 1` is used so the solve still runs.
pub fn support_recovery_trial(p: &TrialParams, seed: u64) -> Result<TrialReport> {
    let planted = plant(p, seed)?;
    let vm = vectorize(&planted.x, &planted.y);
    let pre = check_conditions(&vm, &planted.gamma_star, 0.0);
    let eta = pre.eta.filter(|&e| e > 0.0).unwrap_or(1.0);
    let lambda = if pre.mu > 0.0 {
        theorem_lambda(p.sigma, pre.mu, eta, p.c, p.n)?.max(NOISELESS_LAMBDA)
    } else {
        NOISELESS_LAMBDA
    };
    let conditions = check_conditions(&vm, &planted.gamma_star, lambda);
    let sol = solve_utilde_l1(&vm, lambda, p.tol, 100_000);
    let outcome = recovery_outcome(&sol.gamma, &planted.gamma_star, 10.0 * p.tol);
    let within_h = conditions.h.map(|h| outcome.sup_error <= h);
    Ok(TrialReport {
        seed,
        conditions,
        outcome,
        within_h,
        converged: sol.converged,
    })
}

/// `trials` planted trials with seeds `master ^ index`.
pub fn recovery_batch(p: &TrialParams, trials: usize, master_seed: u64) -> Result<Vec<TrialReport>> {
    (0..trials)
        .map(|t| support_recovery_trial(p, episode_seed(master_seed, t as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bucket {
    None,
    C1,
    C1C2,
    All,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::None, Bucket::C1, Bucket::C1C2, Bucket::All];

    pub fn label(self) -> &'static str {
        match self {
            Bucket::None => "None",
            Bucket::C1 => "C1",
            Bucket::C1C2 => "C1 and C2",
            Bucket::All => "All",
        }
    }

    pub fn of(report: &ConditionReport) -> Bucket {
        match (report.c1, report.c2, report.c3) {
            (false, _, _) => Bucket::None,
            (true, false, _) => Bucket::C1,
            (true, true, false) => Bucket::C1C2,
            (true, true, true) => Bucket::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeConditions {
    pub seed: u64,
    pub bucket: Bucket,
    /// Noise scale estimated from the fit with `gamma` free on `S`.
    pub sigma_hat: f64,
    pub conditions: ConditionReport,
    pub base_accuracy: f64,
    pub loop_accuracy: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyRow {
    pub bucket: Bucket,
    pub improved: usize,
    pub total: usize,
}

impl FrequencyRow {
    pub fn ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.improved as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyTable {
    pub rows: Vec<FrequencyRow>,
    pub episodes: Vec<EpisodeConditions>,
}

/// Least-squares noise estimate with `gamma` free on the planted support:
/// `||y_u - Ut_S gamma_S||^2 / (rows - |S|)`. Falls back to `||y_u||^2 /
/// rows` when there are no residual degrees of freedom.
pub fn estimate_sigma(vm: &VectorizedModel, support: &[usize]) -> f64 {
    let rows = vm.rows();
    if rows == 0 {
        return 0.0;
    }
    let total = vm.y_u.norm_squared();
    if support.is_empty() || rows <= support.len() {
        return (total / rows as f64).sqrt();
    }
    let s = support.len();
    let n = vm.n;
    let kss = DMatrix::from_fn(s, s, |p, q| vm.gram(support[p], support[q]));
    // Ut_S^T y_u, one entry per support index.
    let rhs = DMatrix::from_fn(s, 1, |p, _| {
        let (i, l) = unvec(support[p], n);
        vm.u2.row(i).transpose().dot(&vm.y_u.column(l))
    });
    let explained = match kss.clone().cholesky() {
        Some(ch) => (rhs.transpose() * ch.solve(&rhs))[(0, 0)],
        None => 0.0,
    };
    ((total - explained).max(0.0) / (rows - s) as f64).sqrt()
}

/// Per-episode condition check on the reduced features of `[support;
/// unlabeled]`, with `S` taken from the initial classifier's mistakes on
/// the unlabeled pool, cross-tabulated against whether the loop improved
/// on the support-only classifier.
pub fn condition_frequency_study(
    store: &FeatureStore,
    spec: &EpisodeSpec,
    cfg: &LoopConfig,
    episodes: usize,
    master_seed: u64,
) -> Result<FrequencyTable> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(episodes);
    for t in 0..episodes {
        let ep = sample_episode(store, spec, episode_seed(master_seed, t as u64))?;
        let c = ep.ways();
        let reg = cfg.classifier.reg.unwrap_or_else(|| default_reg(ep.support_y.len()));
        let clf = fit_logreg(&ep.support_x, &ep.support_y, c, reg)?;
        let preds = predict(&clf, &ep.unlabeled_x)?;
        let s = ep.support_y.len();
        let u = ep.unlabeled_x.nrows();
        let mut labels = ep.support_y.clone();
        labels.extend(preds.iter().map(|p| p.label));
        let mut all_x = DMatrix::zeros(s + u, ep.support_x.ncols());
        all_x.rows_mut(0, s).copy_from(&ep.support_x);
        all_x.rows_mut(s, u).copy_from(&ep.unlabeled_x);
        let z = reduce(&all_x, cfg.reduce, cfg.d, cfg.k_lle, cfg.lle_reg)?.z;
        let y = one_hot(&labels, c)?.into_inner();
        let mut gamma_star = DMatrix::zeros(s + u, c);
        for (j, &truth) in ep.unlabeled_truth().iter().enumerate() {
            let p = labels[s + j];
            if p != truth {
                gamma_star[(s + j, p)] = 1.0;
                gamma_star[(s + j, truth)] = -1.0;
            }
        }
        let vm = vectorize(&z, &y);
        let pre = check_conditions(&vm, &gamma_star, 0.0);
        let sigma_hat = estimate_sigma(&vm, &pre.support);
        let conditions = match pre.eta {
            Some(eta) if pre.c2 && pre.mu > 0.0 => {
                let lambda = theorem_lambda(sigma_hat, pre.mu, eta, c, s + u)?;
                check_conditions(&vm, &gamma_star, lambda)
            }
            _ => pre,
        };
        let result = run_episode(&ep, cfg)?;
        records.push(EpisodeConditions {
            seed: ep.seed,
            bucket: Bucket::of(&conditions),
            sigma_hat,
            conditions,
            base_accuracy: result.base_accuracy,
            loop_accuracy: result.query_accuracy,
            improved: result.query_accuracy > result.base_accuracy,
        });
    }
    let rows = Bucket::ALL
        .iter()
        .map(|&bucket| {
            let hits = records.iter().filter(|r| r.bucket == bucket);
            FrequencyRow {
                bucket,
                improved: hits.clone().filter(|r| r.improved).count(),
                total: hits.count(),
            }
        })
        .collect();
    Ok(FrequencyTable { rows, episodes: records })
}

/// `Y - X beta_hat - gamma`.
pub fn fit_residuals(x: &DMatrix<f64>, y: &DMatrix<f64>, gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let beta = beta_hat(x, y, gamma, None);
    y - x * beta - gamma
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// Bins are equal-width over `[-half_width, half_width]`.
    pub half_width: f64,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub variance: f64,
}

impl Histogram {
    pub fn edges(&self, k: usize) -> (f64, f64) {
        let width = 2.0 * self.half_width / self.counts.len() as f64;
        let lo = -self.half_width + k as f64 * width;
        (lo, lo + width)
    }
}

/// Symmetric histogram of all residual entries. The range is the largest
/// absolute residual (at least `1e-6`), so the middle bin of an odd bin
/// count is centred on zero.
pub fn residual_histogram(residuals: &DMatrix<f64>, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(IciError::param("histogram needs at least one bin"));
    }
    let count = residuals.len();
    let half_width = residuals.iter().map(|v| v.abs()).fold(1e-6, f64::max);
    let width = 2.0 * half_width / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in residuals.iter() {
        let k = ((v + half_width) / width).floor();
        counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
    }
    let (mean, variance) = if count == 0 {
        (0.0, 0.0)
    } else {
        let mean = residuals.sum() / count as f64;
        let var = if count > 1 {
            residuals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        (mean, var)
    };
    Ok(Histogram {
        half_width,
        counts,
        mean,
        variance,
    })
}

pub fn write_frequency_csv<W: Write>(table: &FrequencyTable, mut w: W) -> std::io::Result<()> {
    writeln!(w, "bucket,improved,total,ratio")?;
    for row in &table.rows {
        let ratio = row.ratio().map_or(String::new(), |r| format!("{r}"));
        writeln!(w, "{},{},{},{}", row.bucket.label(), row.improved, row.total, ratio)?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v}"))
}

pub fn write_trial_csv<W: Write>(trials: &[TrialReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "seed,C_min,eta,gamma_min,h,recovered,sign_consistent")?;
    for t in trials {
        let c = &t.conditions;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            t.seed,
            opt(c.c_min),
            opt(c.eta),
            opt(c.gamma_min),
            opt(c.h),
            t.outcome.no_false_positive,
            t.outcome.sign_consistent
        )?;
    }
    Ok(())
}

pub fn write_histogram_csv<W: Write>(hist: &Histogram, mut w: W) -> std::io::Result<()> {
    writeln!(w, "bin_lo,bin_hi,count")?;
    for (k, &count) in hist.counts.iter().enumerate() {
        let (lo, hi) = hist.edges(k);
        writeln!(w, "{lo},{hi},{count}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{annihilator, solve_lambda, Penalty, SolverOptions};

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    /// Dense `I_c ⊗ U2^T`, for checks only.
    fn dense_utilde(vm: &VectorizedModel) -> DMatrix<f64> {
        let m = vm.u2.ncols();
        let mut out = DMatrix::zeros(vm.c * m, vm.c * vm.n);
        for l in 0..vm.c {
            out.view_mut((l * m, l * vm.n), (m, vm.n)).copy_from(&vm.u2.transpose());
        }
        out
    }

    fn vec_of(m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(m.len(), 1, m.as_slice())
    }

    #[test]
    fn identity_design_leaves_nothing() {
        let vm = vectorize(&DMatrix::identity(4, 4), &DMatrix::zeros(4, 2));
        assert_eq!(vm.rows(), 0);
    }

    #[test]
    fn single_column_design() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let vm = vectorize(&x, &DMatrix::zeros(3, 2));
        assert_eq!(vm.rows(), 4);
        let ut = dense_utilde(&vm);
        // I_2 ⊗ X
        let mut xk = DMatrix::zeros(6, 2);
        xk[(0, 0)] = 1.0;
        xk[(3, 1)] = 1.0;
        assert!((&ut * xk).abs().max() < 1e-12);
    }

    #[test]
    fn utilde_annihilates_and_is_orthonormal() {
        let x = random(12, 3, 1);
        let y = random(12, 2, 2);
        let vm = vectorize(&x, &y);
        let ut = dense_utilde(&vm);
        assert!((&ut * ut.transpose() - DMatrix::identity(vm.rows(), vm.rows())).abs().max() < 1e-10);
        let beta = random(3, 2, 3);
        assert!((&ut * vec_of(&(&x * beta))).abs().max() < 1e-10);
        assert!((&ut * vec_of(&y) - vec_of(&vm.y_u)).abs().max() < 1e-12);
        // Gram entries match the dense product.
        let g = ut.transpose() * &ut;
        for a in 0..24 {
            for b in 0..24 {
                assert!((vm.gram(a, b) - g[(a, b)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn theorem_lambda_arithmetic() {
        let e = std::f64::consts::E;
        // c n = e is not an integer; scale sigma instead: 2 * sqrt(ln 1) = 0.
        assert_eq!(theorem_lambda(1.0, 1.0, 1.0, 1, 1).unwrap(), 0.0);
        let lam = 2.0 * 1.0 * 1.0 / 1.0 * e.ln().sqrt();
        assert!((lam - 2.0).abs() < 1e-15);
        let a = theorem_lambda(1.0, 2.0, 0.5, 3, 7).unwrap();
        let b = theorem_lambda(2.0, 2.0, 0.5, 3, 7).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
        let v = theorem_lambda(0.5, 4.0, 0.5, 5, 20).unwrap();
        assert!((v - 4.0 * 100f64.ln().sqrt()).abs() < 1e-12);
        assert!(theorem_lambda(1.0, 1.0, 0.0, 5, 20).is_err());
        assert!(theorem_lambda(1.0, 1.0, 1.5, 5, 20).is_err());
    }

    #[test]
    fn orthonormal_support_columns() {
        // X spans the first coordinate; instances 1..4 are orthogonal to it.
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]);
        let vm = vectorize(&x, &DMatrix::zeros(4, 2));
        let mut gs = DMatrix::zeros(4, 2);
        gs[(1, 0)] = 1.0;
        gs[(2, 1)] = -2.0;
        let r = check_conditions(&vm, &gs, 0.1);
        assert!((r.c_min.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.eta.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.c1 && r.c2);
        assert_eq!(r.wrong, vec![1, 2]);
        assert_eq!(r.gamma_min, Some(1.0));
        // h = 0.1 / sqrt(1 * 1) + 0.1 * 1
        assert!((r.h.unwrap() - 0.2).abs() < 1e-12);
        assert!(r.c3);
    }

    #[test]
    fn conditions_match_dense_recomputation() {
        let p = TrialParams::default();
        let planted = plant(&p, 11).unwrap();
        let vm = vectorize(&planted.x, &planted.y);
        let r = check_conditions(&vm, &planted.gamma_star, 0.3);
        let ut = dense_utilde(&vm);
        let s = &r.support;
        let sc: Vec<usize> = (0..p.n * p.c).filter(|a| !s.contains(a)).collect();
        let us = ut.select_columns(s.iter());
        let usc = ut.select_columns(sc.iter());
        let kss = us.transpose() * &us;
        let c_min = kss.clone().symmetric_eigen().eigenvalues.min();
        assert!((r.c_min.unwrap() - c_min).abs() < 1e-10);
        let inv = kss.try_inverse().unwrap();
        let m = usc.transpose() * &us * &inv;
        let norm = m.row_iter().map(|row| row.abs().sum()).fold(0.0, f64::max);
        assert!((r.eta.unwrap() - (1.0 - norm)).abs() < 1e-10);
        let mu = usc.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
        assert!((r.mu - mu).abs() < 1e-12);
        let signs = DMatrix::from_fn(s.len(), 1, |q, _| {
            let (i, l) = unvec(s[q], p.n);
            planted.gamma_star[(i, l)].signum()
        });
        let h = 0.3 * (1.0 - norm) / (c_min * mu).sqrt() + 0.3 * (inv * signs).abs().max();
        assert!((r.h.unwrap() - h).abs() < 1e-10);
    }

    #[test]
    fn utilde_solver_matches_annihilator_form() {
        for seed in 0..5 {
            let x = random(15, 3, 100 + seed);
            let y = random(15, 3, 200 + seed);
            let vm = vectorize(&x, &y);
            let ann = annihilator(&x, None);
            let opts = SolverOptions {
                tol: 1e-11,
                max_iter: 100_000,
            };
            for lambda in [0.05, 0.3, 1.0] {
                let a = solve_utilde_l1(&vm, lambda, 1e-11, 100_000);
                let b = solve_lambda(&ann, &y, lambda, Penalty::L1, &opts, None);
                assert!(a.converged && b.converged);
                assert!((&a.gamma - &b.gamma).abs().max() < 1e-6, "seed {seed} lambda {lambda}");
            }
        }
    }

    #[test]
    fn noiseless_trials_recover_the_support() {
        let p = TrialParams {
            sigma: 0.0,
            ..TrialParams::default()
        };
        let mut verified = 0;
        for seed in 0..20 {
            let t = support_recovery_trial(&p, seed).unwrap();
            if t.conditions.c1 && t.conditions.c2 && t.conditions.c3 {
                verified += 1;
                assert!(t.outcome.sign_consistent, "seed {seed}");
            }
        }
        assert!(verified > 10);
    }

    #[test]
    fn no_flips_no_noise_gives_empty_supports() {
        let p = TrialParams {
            sigma: 0.0,
            flips: 0,
            ..TrialParams::default()
        };
        let t = support_recovery_trial(&p, 3).unwrap();
        assert!(t.outcome.s_hat.is_empty());
        assert!(t.conditions.support.is_empty());
        assert!(t.outcome.sign_consistent);
    }

    #[test]
    fn planted_design_requires_enough_columns() {
        let p = TrialParams {
            d: 2,
            c: 3,
            ..TrialParams::default()
        };
        assert!(plant(&p, 0).is_err());
    }

    #[test]
    fn zero_noise_residuals_sit_in_the_middle_bin() {
        let p = TrialParams {
            sigma: 0.0,
            ..TrialParams::default()
        };
        let planted = plant(&p, 5).unwrap();
        let res = fit_residuals(&planted.x, &planted.y, &planted.gamma_star);
        let hist = residual_histogram(&res, DEFAULT_HISTOGRAM_BINS).unwrap();
        assert_eq!(hist.counts[50], res.len());
        assert_eq!(hist.counts.iter().sum::<usize>(), res.len());
    }

    #[test]
    fn gaussian_residual_variance() {
        let r = random(200, 60, 9);
        let hist = residual_histogram(&r, 51).unwrap();
        assert_eq!(hist.counts.iter().sum::<usize>(), 12_000);
        assert!((hist.variance - 1.0).abs() < 0.1);
    }

    #[test]
    fn sigma_estimate_recovers_noise_scale() {
        let p = TrialParams {
            n: 400,
            sigma: 0.3,
            ..TrialParams::default()
        };
        let planted = plant(&p, 6).unwrap();
        let vm = vectorize(&planted.x, &planted.y);
        let support = support_of(&planted.gamma_star, 0.0);
        let est = estimate_sigma(&vm, &support);
        assert!((est - 0.3).abs() < 0.03, "{est}");
    }
}
