//! The self-taught loop: train on the labeled set, pseudo-label the
//! unlabeled pool, rank it, move the most credible instances per class into
//! the labeled set, and repeat.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{default_reg, fit_logreg, fit_predict_knn, predict, Metric, Prediction};
use crate::data::{episode_seed, l2_normalize, one_hot, sample_episode, Episode, EpisodeSpec, FeatureStore};
use crate::dimreduce::{reduce, ReduceMethod, DEFAULT_LLE_NEIGHBORS, DEFAULT_LLE_REG};
use crate::error::{IciError, Result};
use crate::logit::{solve_logit_path, LogitPathConfig, DEFAULT_ALPHA};
use crate::path::{
    annihilator, default_grid, rank_instances, solve_path, CredibilityRanking, GammaPath, InstanceMark, Penalty,
    SolverOptions,
    DEFAULT_GRID_COUNT, DEFAULT_GRID_RATIO,
};

/// Which regression model produces the regularization path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Linear regression.
    Icir,
    /// Multinomial logistic regression.
    Icic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Vanish point on the ICI path.
    Ici,
    /// Random order.
    Ra,
    /// Distance to the nearest labeled instance of the same class.
    Nn,
    /// Classifier confidence.
    Co,
    /// Norm of the incidental parameter at the end of the path.
    Cn,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::Ici => "ici",
            Selection::Ra => "ra",
            Selection::Nn => "nn",
            Selection::Co => "co",
            Selection::Cn => "cn",
        }
    }

    fn needs_path(self) -> bool {
        matches!(self, Selection::Ici | Selection::Cn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Logreg,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    /// l2 strength for logistic regression; `None` means `1/m`.
    pub reg: Option<f64>,
    /// Neighbours for kNN, clamped to the training size.
    pub k: usize,
    pub metric: Metric,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::Logreg,
            reg: None,
            k: 1,
            metric: Metric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub variant: Variant,
    pub penalty: Penalty,
    pub selection: Selection,
    pub per_class_per_iter: usize,
    /// Upper bound on the total number of instances moved into the support.
    pub total_cap: Option<usize>,
    /// Upper bound on the number of selection rounds.
    pub max_iters: Option<usize>,
    pub reduce: ReduceMethod,
    pub d: usize,
    pub k_lle: usize,
    pub lle_reg: f64,
    /// Recompute the reduced features every round instead of once.
    pub reduce_each_iter: bool,
    /// L2-normalize feature rows before anything else.
    pub normalize: bool,
    pub grid_count: usize,
    pub grid_ratio: f64,
    pub alpha: f64,
    pub tol: f64,
    pub classifier: ClassifierConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            variant: Variant::Icir,
            penalty: Penalty::GroupL2,
            selection: Selection::Ici,
            per_class_per_iter: 5,
            total_cap: None,
            max_iters: None,
            reduce: ReduceMethod::Lle,
            d: 5,
            k_lle: DEFAULT_LLE_NEIGHBORS,
            lle_reg: DEFAULT_LLE_REG,
            reduce_each_iter: false,
            normalize: false,
            grid_count: DEFAULT_GRID_COUNT,
            grid_ratio: DEFAULT_GRID_RATIO,
            alpha: DEFAULT_ALPHA,
            tol: 1e-6,
            classifier: ClassifierConfig::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class_per_iter == 0 {
            return Err(IciError::param("per_class_per_iter must be >= 1"));
        }
        if self.max_iters == Some(0) {
            return Err(IciError::param("max_iters must be >= 1 when given"));
        }
        if self.d == 0 || self.k_lle == 0 {
            return Err(IciError::param("d and k_lle must be >= 1"));
        }
        if !(self.lle_reg >= 0.0) {
            return Err(IciError::param("lle_reg must be >= 0"));
        }
        if self.grid_count < 2 || !(self.grid_ratio > 0.0 && self.grid_ratio < 1.0) {
            return Err(IciError::param("grid needs count >= 2 and ratio in (0, 1)"));
        }
        if !(self.alpha > 0.0) {
            return Err(IciError::param("alpha must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(IciError::param("tol must be positive"));
        }
        if self.classifier.kind == ClassifierKind::Knn && self.classifier.k == 0 {
            return Err(IciError::param("knn needs k >= 1"));
        }
        if let Some(reg) = self.classifier.reg {
            if !(reg >= 0.0) {
                return Err(IciError::param("classifier reg must be >= 0"));
            }
        }
        Ok(())
    }

    /// Number of rounds needed to drain `unlabeled` instances over `ways`
    /// classes, after the total and round caps.
    pub fn round_limit(&self, unlabeled: usize, ways: usize) -> usize {
        let budget = self.total_cap.map_or(unlabeled, |c| c.min(unlabeled));
        let per_round = ways * self.per_class_per_iter;
        let rounds = budget.div_ceil(per_round.max(1));
        self.max_iters.map_or(rounds, |m| rounds.min(m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// Indices into the episode's unlabeled pool.
    pub selected: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
    pub correct: Vec<bool>,
}

impl IterationRecord {
    pub fn precision(&self) -> Option<f64> {
        if self.correct.is_empty() {
            None
        } else {
            Some(self.correct.iter().filter(|&&c| c).count() as f64 / self.correct.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub query_accuracy: f64,
    /// Query accuracy of the classifier trained on the labeled support only.
    pub base_accuracy: f64,
    pub records: Vec<IterationRecord>,
    pub iterations: usize,
    /// Path grid points that hit the iteration limit.
    pub nonconverged: usize,
    pub converged: bool,
    pub per_class_per_iter: usize,
    pub total_cap: Option<usize>,
}

/// Everything a selection strategy may look at. Rows are `[support; pool]`.
#[derive(Debug, Clone, Copy)]
pub struct RankState<'a> {
    pub reduced: &'a DMatrix<f64>,
    /// Label for labeled rows, pseudo-label otherwise.
    pub labels: &'a [usize],
    /// Rows currently in the labeled set.
    pub labeled: &'a [bool],
    /// Classifier probability of `labels[i]`.
    pub confidences: &'a [f64],
    pub path: Option<&'a GammaPath>,
    pub seed: u64,
}

pub fn baseline_rank(strategy: Selection, st: &RankState) -> Result<CredibilityRanking> {
    let n = st.labels.len();
    let zeros = vec![0.0; n];
    let scores: Vec<f64> = match strategy {
        Selection::Ra => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(st.seed));
            let mut pos = vec![0.0; n];
            for (rank, &i) in perm.iter().enumerate() {
                pos[i] = rank as f64;
            }
            pos
        }
        Selection::Nn => (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && st.labeled[j] && st.labels[j] == st.labels[i])
                    .map(|j| (st.reduced.row(i) - st.reduced.row(j)).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect(),
        Selection::Co => st.confidences.iter().map(|c| -c).collect(),
        Selection::Cn => {
            let path = st
                .path
                .ok_or_else(|| IciError::param("cn ranking needs a solved path"))?;
            path.final_row_norms()
        }
        Selection::Ici => {
            return Err(IciError::param("ici is not a baseline strategy"));
        }
    };
    Ok(CredibilityRanking::from_keys(scores, &zeros, st.confidences))
}

/// Greedy walk down the ranking filling a per-pseudo-class quota.
pub fn select_subset(ranking: &CredibilityRanking, pseudo_labels: &[usize], eligible: &[bool], per_class: usize) -> Vec<usize> {
    let classes = pseudo_labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut taken = vec![0usize; classes];
    let mut open = eligible
        .iter()
        .zip(pseudo_labels)
        .filter(|(&e, _)| e)
        .map(|(_, &l)| l)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let mut out = Vec::new();
    for &i in &ranking.order {
        if open == 0 {
            break;
        }
        if !eligible.get(i).copied().unwrap_or(false) {
            continue;
        }
        let l = pseudo_labels[i];
        if taken[l] < per_class {
            taken[l] += 1;
            out.push(i);
            if taken[l] == per_class {
                open -= 1;
            }
        }
    }
    out
}

fn predict_with(
    cfg: &ClassifierConfig,
    train_x: &DMatrix<f64>,
    train_y: &[usize],
    c: usize,
    test_x: &DMatrix<f64>,
) -> Result<Vec<Prediction>> {
    match cfg.kind {
        ClassifierKind::Logreg => {
            let reg = cfg.reg.unwrap_or_else(|| default_reg(train_y.len()));
            let clf = fit_logreg(train_x, train_y, c, reg)?;
            predict(&clf, test_x)
        }
        ClassifierKind::Knn => {
            let k = cfg.k.min(train_y.len());
            fit_predict_knn(train_x, train_y, test_x, c, k, cfg.metric)
        }
    }
}

fn accuracy(preds: &[Prediction], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(truth).filter(|(p, &t)| p.label == t).count();
    hits as f64 / truth.len() as f64
}

fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

fn solve_ici(cfg: &LoopConfig, z: &DMatrix<f64>, labels: &[usize], c: usize) -> Result<GammaPath> {
    let y = one_hot(labels, c)?.into_inner();
    match cfg.variant {
        Variant::Icir => {
            let ann = annihilator(z, None);
            let grid = default_grid(&ann, &y, cfg.penalty, cfg.grid_count, cfg.grid_ratio)?;
            let opts = SolverOptions {
                tol: cfg.tol,
                ..SolverOptions::default()
            };
            Ok(solve_path(&ann, &y, &grid, cfg.penalty, &opts))
        }
        Variant::Icic => {
            let mut lcfg = LogitPathConfig {
                alpha: cfg.alpha,
                grid_count: cfg.grid_count,
                grid_ratio: cfg.grid_ratio,
                ..LogitPathConfig::default()
            };
            lcfg.opts.tol = cfg.tol;
            solve_logit_path(z, &y, &lcfg, cfg.penalty)
        }
    }
}

/// Run the loop on one episode and score the final classifier on the query
/// set.
pub fn run_episode(ep: &Episode, cfg: &LoopConfig) -> Result<EpisodeResult> {
    cfg.validate()?;
    let c = ep.ways();
    let norm = |m: &DMatrix<f64>| if cfg.normalize { l2_normalize(m) } else { m.clone() };
    let support_x = norm(&ep.support_x);
    let pool_x = norm(&ep.unlabeled_x);
    let query_x = norm(&ep.query_x);
    let s = support_x.nrows();
    let u = pool_x.nrows();
    let n = s + u;
    let truth = ep.unlabeled_truth();

    let base = predict_with(&cfg.classifier, &support_x, &ep.support_y, c, &query_x)?;
    let base_accuracy = accuracy(&base, &ep.query_y);

    let all_x = stack_rows(&support_x, &pool_x);
    let reduce_all = |x: &DMatrix<f64>| reduce(x, cfg.reduce, cfg.d, cfg.k_lle, cfg.lle_reg).map(|r| r.z);
    let mut reduced = if u > 0 && cfg.selection != Selection::Co && cfg.selection != Selection::Ra {
        Some(reduce_all(&all_x)?)
    } else {
        None
    };

    // Assigned label of every pool row once selected.
    let mut assigned: Vec<Option<usize>> = vec![None; u];
    let mut records = Vec::new();
    let mut nonconverged = 0;
    let mut selected_total = 0;
    let budget = cfg.total_cap.map_or(u, |cap| cap.min(u));
    let rounds = cfg.round_limit(u, c);

    for round in 0..rounds {
        if selected_total >= budget {
            break;
        }
        let (train_x, train_y) = training_set(&support_x, &ep.support_y, &pool_x, &assigned);
        let preds = predict_with(&cfg.classifier, &train_x, &train_y, c, &pool_x)?;

        let mut labels = ep.support_y.clone();
        let mut confidences = vec![1.0; s];
        let mut labeled = vec![true; s];
        let mut eligible = vec![false; s];
        for (j, p) in preds.iter().enumerate() {
            let l = assigned[j].unwrap_or(p.label);
            labels.push(l);
            confidences.push(p.proba[l]);
            labeled.push(assigned[j].is_some());
            eligible.push(assigned[j].is_none());
        }

        if cfg.reduce_each_iter && round > 0 {
            if let Some(r) = reduced.as_mut() {
                *r = reduce_all(&all_x)?;
            }
        }
        let path = if cfg.selection.needs_path() {
            let z = reduced.as_ref().expect("reduced features computed for path strategies");
            let path = solve_ici(cfg, z, &labels, c)?;
            nonconverged += path.nonconverged();
            Some(path)
        } else {
            None
        };

        let ranking = match cfg.selection {
            Selection::Ici => rank_instances(path.as_ref().expect("path solved"), &confidences),
            other => {
                let empty = DMatrix::zeros(n, 0);
                let st = RankState {
                    reduced: reduced.as_ref().unwrap_or(&empty),
                    labels: &labels,
                    labeled: &labeled,
                    confidences: &confidences,
                    path: path.as_ref(),
                    seed: ep.seed.wrapping_add(round as u64),
                };
                baseline_rank(other, &st)?
            }
        };

        let mut picks = select_subset(&ranking, &labels, &eligible, cfg.per_class_per_iter);
        picks.truncate(budget - selected_total);
        if picks.is_empty() {
            break;
        }
        let mut record = IterationRecord {
            selected: Vec::with_capacity(picks.len()),
            pseudo_labels: Vec::with_capacity(picks.len()),
            correct: Vec::with_capacity(picks.len()),
        };
        for &row in &picks {
            let j = row - s;
            assigned[j] = Some(labels[row]);
            record.selected.push(j);
            record.pseudo_labels.push(labels[row]);
            record.correct.push(truth[j] == labels[row]);
        }
        selected_total += picks.len();
        records.push(record);
    }

    let (train_x, train_y) = training_set(&support_x, &ep.support_y, &pool_x, &assigned);
    let final_preds = predict_with(&cfg.classifier, &train_x, &train_y, c, &query_x)?;
    Ok(EpisodeResult {
        seed: ep.seed,
        query_accuracy: accuracy(&final_preds, &ep.query_y),
        base_accuracy,
        iterations: records.len(),
        records,
        nonconverged,
        converged: nonconverged == 0,
        per_class_per_iter: cfg.per_class_per_iter,
        total_cap: cfg.total_cap,
    })
}

/// The first round's regularization path over support plus pool rows, with
/// the ICI selection and (where truth is known) correctness of each row's
/// pseudo-label. Support rows carry their given label.
pub fn first_round_path(ep: &Episode, cfg: &LoopConfig) -> Result<(GammaPath, Vec<InstanceMark>)> {
    cfg.validate()?;
    let c = ep.ways();
    let norm = |m: &DMatrix<f64>| if cfg.normalize { l2_normalize(m) } else { m.clone() };
    let support_x = norm(&ep.support_x);
    let pool_x = norm(&ep.unlabeled_x);
    let s = support_x.nrows();
    if pool_x.nrows() == 0 {
        return Err(IciError::param("path dump needs a non-empty unlabeled pool"));
    }
    let preds = predict_with(&cfg.classifier, &support_x, &ep.support_y, c, &pool_x)?;
    let mut labels = ep.support_y.clone();
    let mut confidences = vec![1.0; s];
    for p in &preds {
        labels.push(p.label);
        confidences.push(p.proba[p.label]);
    }
    let z = reduce(&stack_rows(&support_x, &pool_x), cfg.reduce, cfg.d, cfg.k_lle, cfg.lle_reg)?.z;
    let path = solve_ici(cfg, &z, &labels, c)?;
    let ranking = rank_instances(&path, &confidences);
    let eligible: Vec<bool> = (0..labels.len()).map(|i| i >= s).collect();
    let picks = select_subset(&ranking, &labels, &eligible, cfg.per_class_per_iter);
    let truth = ep.unlabeled_truth();
    let marks = (0..labels.len())
        .map(|i| InstanceMark {
            selected: picks.contains(&i),
            pseudo_label: labels[i],
            correct: Some(i < s || truth[i - s] == labels[i]),
        })
        .collect();
    Ok((path, marks))
}

fn training_set(
    support_x: &DMatrix<f64>,
    support_y: &[usize],
    pool_x: &DMatrix<f64>,
    assigned: &[Option<usize>],
) -> (DMatrix<f64>, Vec<usize>) {
    let chosen: Vec<(usize, usize)> = assigned
        .iter()
        .enumerate()
        .filter_map(|(j, l)| l.map(|l| (j, l)))
        .collect();
    let s = support_x.nrows();
    let mut x = DMatrix::zeros(s + chosen.len(), support_x.ncols());
    x.rows_mut(0, s).copy_from(support_x);
    let mut y = support_y.to_vec();
    for (r, &(j, l)) in chosen.iter().enumerate() {
        x.row_mut(s + r).copy_from(&pool_x.row(j));
        y.push(l);
    }
    (x, y)
}

/// Sample and run `count` episodes with seeds `master ^ index`, using up to
/// `jobs` worker threads. Results come back in index order.
pub fn run_episodes(
    store: &FeatureStore,
    spec: &EpisodeSpec,
    cfg: &LoopConfig,
    count: usize,
    master_seed: u64,
    jobs: usize,
) -> Result<Vec<EpisodeResult>> {
    cfg.validate()?;
    spec.validate()?;
    let work = |i: usize| -> Result<EpisodeResult> {
        let ep = sample_episode(store, spec, episode_seed(master_seed, i as u64))?;
        run_episode(&ep, cfg)
    };
    if jobs <= 1 {
        return (0..count).map(work).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| IciError::param(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(work).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    /// Half-width of the 95% interval, `1.96 * std / sqrt(E)`.
    pub ci95: f64,
    pub mean_base: f64,
    pub mean_iterations: f64,
    /// Pooled fraction of correct pseudo-labels among the instances selected
    /// in each round; `None` when no episode reached that round.
    pub selection_precision: Vec<Option<f64>>,
    pub nonconverged: usize,
    pub per_class_per_iter: usize,
    pub total_cap: Option<usize>,
}

pub fn evaluate(results: &[EpisodeResult]) -> Result<AccuracyReport> {
    let first = results
        .first()
        .ok_or_else(|| IciError::param("no episode results to evaluate"))?;
    let e = results.len() as f64;
    let mean = results.iter().map(|r| r.query_accuracy).sum::<f64>() / e;
    // Shifted by the first value so that identical inputs give exactly zero.
    let shift = first.query_accuracy;
    let std = if results.len() > 1 {
        let dev: Vec<f64> = results.iter().map(|r| r.query_accuracy - shift).collect();
        let m = dev.iter().sum::<f64>() / e;
        (dev.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (e - 1.0)).sqrt()
    } else {
        0.0
    };
    let rounds = results.iter().map(|r| r.records.len()).max().unwrap_or(0);
    let selection_precision = (0..rounds)
        .map(|t| {
            let (hit, total) = results
                .iter()
                .filter_map(|r| r.records.get(t))
                .fold((0usize, 0usize), |(h, n), rec| {
                    (h + rec.correct.iter().filter(|&&c| c).count(), n + rec.correct.len())
                });
            (total > 0).then(|| hit as f64 / total as f64)
        })
        .collect();
    Ok(AccuracyReport {
        episodes: results.len(),
        mean,
        std,
        ci95: 1.96 * std / e.sqrt(),
        mean_base: results.iter().map(|r| r.base_accuracy).sum::<f64>() / e,
        mean_iterations: results.iter().map(|r| r.iterations as f64).sum::<f64>() / e,
        selection_precision,
        nonconverged: results.iter().map(|r| r.nonconverged).sum(),
        per_class_per_iter: first.per_class_per_iter,
        total_cap: first.total_cap,
    })
}
