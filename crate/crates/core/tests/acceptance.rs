//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ici::data::{one_hot, sample_episode, synth_gaussian, EpisodeSpec, FeatureStore, SynthParams};
use ici::dimreduce::{lle_fit_transform, lle_weights};
use ici::logit::{gradient_check, solve_logit_grid, LogitOptions, LogitPathConfig};
use ici::path::{
    annihilator, default_grid, solve_lambda, solve_path, zero_threshold, Annihilator, LambdaGrid, Penalty,
    SolverOptions,
};
use ici::selftrain::{evaluate, run_episode, run_episodes, EpisodeResult, LoopConfig, Selection};
use ici::theory::{solve_utilde_l1, support_recovery_trial, vectorize, TrialParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
}

fn random_labels(n: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    one_hot(&labels, c).unwrap().into_inner()
}

fn penalty_value(m: &DMatrix<f64>, penalty: Penalty) -> f64 {
    match penalty {
        Penalty::L1 => m.iter().map(|v| v.abs()).sum(),
        Penalty::GroupL2 => m.row_iter().map(|r| r.norm()).sum(),
    }
}

fn prox(m: &DMatrix<f64>, t: f64, penalty: Penalty) -> DMatrix<f64> {
    match penalty {
        Penalty::L1 => m.map(|v| v.signum() * (v.abs() - t).max(0.0)),
        Penalty::GroupL2 => {
            let mut out = m.clone();
            for mut row in out.row_iter_mut() {
                let norm = row.norm();
                let s = if norm > t { 1.0 - t / norm } else { 0.0 };
                row *= s;
            }
            out
        }
    }
}

/// Accelerated proximal gradient with gradient-based restart, stopped when
/// the iterate moves less than `1e-13` or after `max_iter` steps.
fn fista<G, F>(x0: DMatrix<f64>, step: f64, grad: G, prox_step: F, max_iter: usize) -> DMatrix<f64>
where
    G: Fn(&DMatrix<f64>) -> DMatrix<f64>,
    F: Fn(&DMatrix<f64>, f64) -> DMatrix<f64>,
{
    let mut x = x0.clone();
    let mut z = x0;
    let mut t = 1.0f64;
    for _ in 0..max_iter {
        let next = prox_step(&(&z - grad(&z) * step), step);
        let moved = (&next - &x).abs().max();
        // Restart momentum when it points uphill.
        let uphill = (&z - &next).dot(&(&next - &x)) > 0.0;
        let t_next = if uphill { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        z = if uphill { next.clone() } else { &next + (&next - &x) * ((t - 1.0) / t_next) };
        t = t_next;
        x = next;
        if moved < 1e-13 {
            break;
        }
    }
    x
}

fn linear_objective(ann: &Annihilator, y: &DMatrix<f64>, g: &DMatrix<f64>, lambda: f64, penalty: Penalty) -> f64 {
    0.5 * (&ann.xtilde * (y - g)).norm_squared() + lambda * penalty_value(g, penalty)
}

/// Absolute stationarity violations: active rows/entries must balance the
/// gradient exactly, zero blocks must have dual norm at most lambda.
fn kkt_violation(ann: &Annihilator, y: &DMatrix<f64>, g: &DMatrix<f64>, lambda: f64, penalty: Penalty) -> f64 {
    let grad = &ann.xtilde * (g - y);
    let mut worst = 0.0f64;
    match penalty {
        Penalty::GroupL2 => {
            for i in 0..g.nrows() {
                let norm = g.row(i).norm();
                if norm > 0.0 {
                    for j in 0..g.ncols() {
                        worst = worst.max((grad[(i, j)] + lambda * g[(i, j)] / norm).abs());
                    }
                } else {
                    worst = worst.max(grad.row(i).norm() - lambda);
                }
            }
        }
        Penalty::L1 => {
            for (gr, &v) in grad.iter().zip(g.iter()) {
                if v != 0.0 {
                    worst = worst.max((gr + lambda * v.signum()).abs());
                } else {
                    worst = worst.max(gr.abs() - lambda);
                }
            }
        }
    }
    worst
}

fn small_instance(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = rng.random_range(3..=20);
    let c = rng.random_range(2..=3);
    let d = rng.random_range(1..=4usize).min(n - 1);
    let x = gaussian(n, d, rng);
    let y = if rng.random_bool(0.5) {
        random_labels(n, c, rng)
    } else {
        gaussian(n, c, rng)
    };
    (x, y)
}

fn kkt_certification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = SolverOptions::default();
    let mut worst = 0.0f64;
    let mut points = 0;
    for t in 0..500 {
        let (x, y) = small_instance(&mut rng);
        let penalty = if t % 2 == 0 { Penalty::GroupL2 } else { Penalty::L1 };
        let ann = annihilator(&x, None);
        let grid = default_grid(&ann, &y, penalty, 100, 1e-3).unwrap();
        let path = solve_path(&ann, &y, &grid, penalty, &opts);
        for (g, &lam) in path.gammas.iter().zip(&path.lambdas) {
            worst = worst.max(kkt_violation(&ann, &y, g, lam, penalty));
            points += 1;
        }
    }
    Outcome {
        pass: worst <= 1e-5,
        detail: format!("500 instances, {points} grid points, worst violation {worst:.2e} (limit 1e-5)"),
    }
}

fn logit_objective(x: &DMatrix<f64>, y: &DMatrix<f64>, b: &DMatrix<f64>, g: &DMatrix<f64>, l1: f64, l2: f64, penalty: Penalty) -> f64 {
    let eta = x * b + g;
    let n = x.nrows() as f64;
    let mut nll = 0.0;
    for i in 0..eta.nrows() {
        let m = eta.row(i).max();
        let lse = m + eta.row(i).iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        nll += lse - eta.row(i).dot(&y.row(i));
    }
    nll / n + l1 * penalty_value(b, penalty) + l2 * penalty_value(g, penalty)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = SolverOptions {
        tol: 1e-9,
        max_iter: 100_000,
    };
    let (mut obj_gap, mut gamma_gap) = (0.0f64, 0.0f64);
    for (inst, penalty) in [(0, Penalty::GroupL2), (1, Penalty::L1), (2, Penalty::GroupL2), (3, Penalty::L1)] {
        let n = 12 + inst;
        let x = gaussian(n, 3, &mut rng);
        let y = random_labels(n, 3, &mut rng);
        let ann = annihilator(&x, None);
        let top = zero_threshold(&ann, &y, penalty);
        let mut lambdas: Vec<f64> = (0..20).map(|_| top * rng.random_range(0.01..1.0)).collect();
        lambdas.sort_by(|a, b| b.total_cmp(a));
        lambdas.dedup();
        let grid = LambdaGrid::from_values(lambdas.clone()).unwrap();
        let path = solve_path(&ann, &y, &grid, penalty, &opts);
        for (g, &lam) in path.gammas.iter().zip(&lambdas) {
            let xt = ann.xtilde.clone();
            let reference = fista(
                DMatrix::zeros(n, 3),
                1.0,
                |z| &xt * (z - &y),
                |m, s| prox(m, s * lam, penalty),
                400_000,
            );
            let a = linear_objective(&ann, &y, g, lam, penalty);
            let b = linear_objective(&ann, &y, &reference, lam, penalty);
            obj_gap = obj_gap.max((a - b).abs());
            gamma_gap = gamma_gap.max((g - &reference).abs().max());
        }
    }

    let mut logit_gap = 0.0f64;
    let cfg = LogitPathConfig {
        opts: LogitOptions {
            tol: 1e-9,
            ..LogitOptions::default()
        },
        ..LogitPathConfig::default()
    };
    for penalty in [Penalty::GroupL2, Penalty::L1] {
        let (n, d, c) = (10, 2, 3);
        let x = gaussian(n, d, &mut rng);
        let y = random_labels(n, c, &mut rng);
        let mut lambdas: Vec<f64> = (0..20).map(|_| rng.random_range(0.002..0.1)).collect();
        lambdas.sort_by(|a, b| b.total_cmp(a));
        lambdas.dedup();
        let grid = LambdaGrid::from_values(lambdas.clone()).unwrap();
        let path = solve_logit_grid(&x, &y, &grid, &cfg, penalty);
        // Stack (beta; gamma) against the augmented design (X | I).
        let mut xbar = DMatrix::zeros(n, d + n);
        xbar.columns_mut(0, d).copy_from(&x);
        xbar.columns_mut(d, n).fill_with_identity();
        let smax = xbar.clone().singular_values().max();
        let step = 1.0 / (0.5 * smax * smax / n as f64);
        for (k, &l2) in lambdas.iter().enumerate() {
            let l1 = cfg.alpha * l2;
            let grad = |theta: &DMatrix<f64>| {
                let eta = &xbar * theta;
                let mut p = eta.clone();
                for mut row in p.row_iter_mut() {
                    let m = row.max();
                    row.apply(|v| *v = (*v - m).exp());
                    let s = row.sum();
                    row /= s;
                }
                xbar.transpose() * ((p - &y) / n as f64)
            };
            let prox_both = |m: &DMatrix<f64>, s: f64| {
                let mut out = m.clone();
                let b = prox(&m.rows(0, d).into_owned(), s * l1, penalty);
                let g = prox(&m.rows(d, n).into_owned(), s * l2, penalty);
                out.rows_mut(0, d).copy_from(&b);
                out.rows_mut(d, n).copy_from(&g);
                out
            };
            let theta = fista(DMatrix::zeros(d + n, c), step, grad, prox_both, 400_000);
            let reference = logit_objective(
                &x,
                &y,
                &theta.rows(0, d).into_owned(),
                &theta.rows(d, n).into_owned(),
                l1,
                l2,
                penalty,
            );
            // The path keeps gamma only; recover beta by solving with gamma fixed
            // is unnecessary: compare objectives via a beta re-solve below.
            let ours = path_objective(&x, &y, &path.gammas[k], l1, l2, penalty, step);
            logit_gap = logit_gap.max(ours - reference);
        }
    }
    let pass = obj_gap <= 1e-5 && gamma_gap <= 1e-4 && logit_gap <= 1e-4;
    Outcome {
        pass,
        detail: format!(
            "linear: objective gap {obj_gap:.2e} (1e-5), gamma gap {gamma_gap:.2e} (1e-4); logistic objective excess {logit_gap:.2e} (1e-4)"
        ),
    }
}

/// Objective of the logistic path solution: the path reports gamma, so beta
/// is re-optimized with gamma held fixed before evaluating.
fn path_objective(x: &DMatrix<f64>, y: &DMatrix<f64>, gamma: &DMatrix<f64>, l1: f64, l2: f64, penalty: Penalty, step: f64) -> f64 {
    let n = x.nrows() as f64;
    let grad = |b: &DMatrix<f64>| {
        let mut p = x * b + gamma;
        for mut row in p.row_iter_mut() {
            let m = row.max();
            row.apply(|v| *v = (*v - m).exp());
            let s = row.sum();
            row /= s;
        }
        x.transpose() * ((p - y) / n)
    };
    let beta = fista(
        DMatrix::zeros(x.ncols(), y.ncols()),
        step,
        grad,
        |m, s| prox(m, s * l1, penalty),
        200_000,
    );
    logit_objective(x, y, &beta, gamma, l1, l2, penalty)
}

fn lambda_max_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = SolverOptions::default();
    let (mut zero_at_top, mut active_below) = (0, 0);
    for t in 0..100 {
        let (x, y) = small_instance(&mut rng);
        let penalty = if t % 2 == 0 { Penalty::GroupL2 } else { Penalty::L1 };
        let ann = annihilator(&x, None);
        let top = default_grid(&ann, &y, penalty, 100, 1e-3).unwrap().max();
        let at = solve_lambda(&ann, &y, top, penalty, &opts, None);
        if at.gamma.iter().all(|&v| v == 0.0) {
            zero_at_top += 1;
        }
        let below = solve_lambda(&ann, &y, 0.99 * top, penalty, &opts, None);
        if below.gamma.iter().any(|&v| v != 0.0) {
            active_below += 1;
        }
    }
    Outcome {
        pass: zero_at_top == 100 && active_below >= 95,
        detail: format!("exactly zero at lambda_max: {zero_at_top}/100; nonzero at 0.99 lambda_max: {active_below}/100 (>= 95)"),
    }
}

fn closed_form_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // A zero design makes the annihilator the identity.
    let ann = annihilator(&DMatrix::zeros(8, 2), None);
    let y = gaussian(8, 4, &mut rng);
    let grid = default_grid(&ann, &y, Penalty::GroupL2, 100, 1e-3).unwrap();
    let path = solve_path(&ann, &y, &grid, Penalty::GroupL2, &SolverOptions::default());
    let mut worst = 0.0f64;
    for (g, &lam) in path.gammas.iter().zip(grid.values()) {
        for i in 0..8 {
            let norm = y.row(i).norm();
            let shrink = (1.0 - lam / norm).max(0.0);
            worst = worst.max((g.row(i) - y.row(i) * shrink).abs().max());
        }
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("identity design, 100 grid points, max deviation {worst:.2e} (1e-8)"),
    }
}

fn theorem_recovery() -> Outcome {
    // Low noise: C1-C3 usually verified.
    let low = TrialParams {
        sigma: 0.05,
        ..TrialParams::default()
    };
    // Higher noise: C3 usually fails, C1-C2 still hold.
    let high = TrialParams {
        sigma: 0.15,
        ..TrialParams::default()
    };
    let (mut all, mut exact) = (0, 0);
    let (mut c12, mut subset) = (0, 0);
    let (mut trials, mut implied) = (0, 0);
    let mut seed = 0u64;
    while all < 200 && seed < 5_000 {
        let t = support_recovery_trial(&low, seed).unwrap();
        seed += 1;
        trials += 1;
        implied += usize::from(!t.outcome.no_false_positive || t.outcome.instances_subset);
        let c = &t.conditions;
        if c.c1 && c.c2 {
            c12 += 1;
            subset += usize::from(t.outcome.no_false_positive);
        }
        if c.c1 && c.c2 && c.c3 {
            all += 1;
            exact += usize::from(t.outcome.sign_consistent);
        }
    }
    for s in 0..200 {
        let t = support_recovery_trial(&high, 100_000 + s).unwrap();
        trials += 1;
        implied += usize::from(!t.outcome.no_false_positive || t.outcome.instances_subset);
        if t.conditions.c1 && t.conditions.c2 {
            c12 += 1;
            subset += usize::from(t.outcome.no_false_positive);
        }
    }
    let exact_rate = exact as f64 / all.max(1) as f64;
    let subset_rate = subset as f64 / c12.max(1) as f64;
    Outcome {
        pass: all == 200 && exact_rate >= 0.95 && subset_rate >= 0.95 && implied == trials,
        detail: format!(
            "C1-C3 verified {all}: sign-consistent {exact_rate:.3} (>= 0.95); C1-C2 verified {c12}: S_hat in S {subset_rate:.3} (>= 0.95); S_hat in S => O_hat in O {implied}/{trials}"
        ),
    }
}

fn formulation_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = SolverOptions {
        tol: 1e-11,
        max_iter: 200_000,
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(6..=25);
        let d = rng.random_range(1..=4);
        let c = rng.random_range(2..=4);
        let x = gaussian(n, d, &mut rng);
        let y = if rng.random_bool(0.5) {
            random_labels(n, c, &mut rng)
        } else {
            gaussian(n, c, &mut rng)
        };
        let ann = annihilator(&x, None);
        let lambda = zero_threshold(&ann, &y, Penalty::L1) * rng.random_range(0.05..0.9);
        let a = solve_lambda(&ann, &y, lambda, Penalty::L1, &opts, None);
        let b = solve_utilde_l1(&vectorize(&x, &y), lambda, 1e-11, 200_000);
        worst = worst.max((&a.gamma - &b.gamma).abs().max());
    }
    Outcome {
        pass: worst <= 1e-5,
        detail: format!("100 instances, max |gamma difference| {worst:.2e} (1e-5)"),
    }
}

fn gradient_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(3..=12);
        let d = rng.random_range(1..=4);
        let c = rng.random_range(2..=5);
        let x = gaussian(n, d, &mut rng);
        let y = random_labels(n, c, &mut rng);
        let beta = gaussian(d, c, &mut rng);
        let gamma = gaussian(n, c, &mut rng) * 0.5;
        worst = worst.max(gradient_check(&x, &y, &beta, &gamma));
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!("50 configurations, max relative error {worst:.2e} (< 1e-4)"),
    }
}

fn ablation_store() -> FeatureStore {
    synth_gaussian(&SynthParams {
        classes: 20,
        per_class: 60,
        dim: 32,
        separation: 3.0,
        noise_sigma: 1.0,
        seed: 7,
    })
    .unwrap()
}

fn mean_accuracy(results: &[EpisodeResult]) -> f64 {
    evaluate(results).unwrap().mean
}

struct Ablation {
    ici: Vec<EpisodeResult>,
}

fn selection_ordering(store: &FeatureStore, spec: &EpisodeSpec) -> (Outcome, Ablation) {
    let run = |selection| {
        let cfg = LoopConfig {
            selection,
            ..LoopConfig::default()
        };
        run_episodes(store, spec, &cfg, 500, 2024, 1).unwrap()
    };
    let ici = run(Selection::Ici);
    let co = mean_accuracy(&run(Selection::Co));
    let ra = mean_accuracy(&run(Selection::Ra));
    let ic = mean_accuracy(&ici);
    let outcome = Outcome {
        pass: ic >= co && co >= ra && (ic - ra) * 100.0 >= 1.5,
        detail: format!(
            "500 episodes 5-way 1-shot: ICI {:.2} >= CO {:.2} >= RA {:.2}, ICI - RA = {:.2} points (>= 1.5)",
            100.0 * ic,
            100.0 * co,
            100.0 * ra,
            100.0 * (ic - ra)
        ),
    };
    (outcome, Ablation { ici })
}

fn iterative_manner(store: &FeatureStore, spec: &EpisodeSpec, ablation: &Ablation) -> Outcome {
    let once = LoopConfig {
        per_class_per_iter: 15,
        max_iters: Some(1),
        ..LoopConfig::default()
    };
    let single = run_episodes(store, spec, &once, 500, 2024, 1).unwrap();
    let iterative = &ablation.ici;
    let three = iterative.iter().all(|r| r.iterations <= 3);
    let a = mean_accuracy(iterative);
    let b = mean_accuracy(&single);
    Outcome {
        pass: three && (a - b) * 100.0 >= -0.2,
        detail: format!(
            "500 paired episodes: 5/class x 3 rounds {:.2} vs 15/class x 1 round {:.2} (difference {:+.2}, >= -0.2)",
            100.0 * a,
            100.0 * b,
            100.0 * (a - b)
        ),
    }
}

fn determinism(store: &FeatureStore, spec: &EpisodeSpec) -> Outcome {
    let cfg = LoopConfig::default();
    let report = || {
        let results = run_episodes(store, spec, &cfg, 20, 99, 1).unwrap();
        let summary = evaluate(&results).unwrap();
        serde_json::to_vec(&(summary, results)).unwrap()
    };
    let parallel = || {
        let results = run_episodes(store, spec, &cfg, 20, 99, 4).unwrap();
        let summary = evaluate(&results).unwrap();
        serde_json::to_vec(&(summary, results)).unwrap()
    };
    let (a, b, c) = (report(), report(), parallel());
    Outcome {
        pass: a == b && a == c,
        detail: format!("20-episode report, {} bytes; identical across reruns and 1 vs 4 workers", a.len()),
    }
}

fn lle_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for t in 0..200 {
        let n = rng.random_range(4..=40);
        let dim = rng.random_range(1..=8);
        let k = rng.random_range(1..n);
        let mut x = gaussian(n, dim, &mut rng);
        if t % 3 == 0 {
            // Coincident points.
            let r = x.row(0).into_owned();
            for i in 1..n.min(5) {
                x.row_mut(i).copy_from(&r);
            }
        }
        if t % 5 == 0 {
            x *= 1e-6;
        }
        let w = lle_weights(&x, k, 1e-3).unwrap();
        for i in 0..n {
            worst = worst.max((w.row(i).sum() - 1.0).abs());
        }
    }
    let dir = [0.3, -1.2, 0.7];
    let line = DMatrix::from_fn(12, 3, |i, j| 2.0 + i as f64 * dir[j]);
    let z = lle_fit_transform(&line, 1, 2, 1e-3).unwrap().z;
    let col: Vec<f64> = z.column(0).iter().copied().collect();
    let monotone = col.windows(2).all(|p| p[1] > p[0]) || col.windows(2).all(|p| p[1] < p[0]);
    Outcome {
        pass: worst <= 1e-8 && monotone,
        detail: format!("200 inputs, max |row sum - 1| {worst:.2e} (1e-8); 12-point line embeds monotonically: {monotone}"),
    }
}

fn degenerate_loops() -> Outcome {
    let noisy = ablation_store();
    let spec = EpisodeSpec::transductive(5, 1, 15);
    let cfg = LoopConfig::default();
    let mut empty_ok = 0;
    for s in 0..20 {
        let ep = sample_episode(&noisy, &spec, s).unwrap().without_unlabeled();
        let r = run_episode(&ep, &cfg).unwrap();
        empty_ok += usize::from(r.iterations == 0 && r.query_accuracy == r.base_accuracy);
    }
    let clean = synth_gaussian(&SynthParams {
        classes: 10,
        per_class: 30,
        dim: 16,
        separation: 8.0,
        noise_sigma: 0.0,
        seed: 3,
    })
    .unwrap();
    let mut clean_ok = 0;
    for s in 0..20 {
        let ep = sample_episode(&clean, &spec, s).unwrap();
        let r = run_episode(&ep, &cfg).unwrap();
        let precise = r.records.iter().all(|rec| rec.precision() == Some(1.0));
        clean_ok += usize::from(r.query_accuracy == 1.0 && precise && r.iterations > 0);
    }
    Outcome {
        pass: empty_ok == 20 && clean_ok == 20,
        detail: format!(
            "u=0 reproduces base accuracy {empty_ok}/20; zero-noise episodes at accuracy 1.0 with precision 1.0 {clean_ok}/20"
        ),
    }
}

fn report(index: usize, name: &str, elapsed: Duration, out: &Outcome) -> bool {
    let tag = if out.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {index:>2}. {name} ({:.1}s): {}", elapsed.as_secs_f64(), out.detail);
    out.pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn main() {
    let mut ok = true;
    let mut check = |index: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let (out, t) = timed(f);
        ok &= report(index, name, t, &out);
    };
    check(1, "KKT certification", &kkt_certification);
    check(2, "oracle equivalence", &oracle_equivalence);
    check(3, "lambda_max property", &lambda_max_property);
    check(4, "closed-form identity path", &closed_form_identity);
    check(5, "support recovery", &theorem_recovery);
    check(6, "formulation equivalence", &formulation_equivalence);
    check(7, "gradient check", &gradient_agreement);

    let store = ablation_store();
    let spec = EpisodeSpec::transductive(5, 1, 15);
    let ((ordering, ablation), t8) = timed(|| selection_ordering(&store, &spec));
    ok &= report(8, "selection-strategy ordering", t8, &ordering);
    let (iter, t9) = timed(|| iterative_manner(&store, &spec, &ablation));
    ok &= report(9, "iterative manner", t9, &iter);

    let mut check = |index: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let (out, t) = timed(f);
        ok &= report(index, name, t, &out);
    };
    check(10, "determinism", &|| determinism(&store, &spec));
    check(11, "LLE invariants", &lle_invariants);
    check(12, "degenerate loops", &degenerate_loops);

    if !ok {
        eprintln!("acceptance: at least one criterion failed");
        std::process::exit(1);
    }
}
