//! Logistic-model path with both penalties, compared against the linear path
//! on the same corrupted problem.
//!
//! ```text
//! cargo run --release --example logistic_path
//! ```

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ici::data::one_hot;
use ici::logit::{gradient_check, solve_logit_path, LogitPathConfig};
use ici::path::{annihilator, default_grid, rank_instances, solve_path, Penalty, SolverOptions};

fn main() -> ici::Result<()> {
    let (n, c, d) = (30, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0, 0.7).unwrap();
    let truth: Vec<usize> = (0..n).map(|i| i % c).collect();
    let x = DMatrix::from_fn(n, d, |i, j| if j == truth[i] { 2.5 } else { 0.0 } + noise.sample(&mut rng));
    let mut labels = truth.clone();
    let corrupted = [1, 8, 14, 25];
    for &i in &corrupted {
        labels[i] = (labels[i] + 2) % c;
    }
    let y = one_hot(&labels, c)?.into_inner();

    let beta = DMatrix::from_fn(d, c, |i, j| 0.1 * (i as f64 - j as f64));
    println!("smooth-gradient check: {:.2e}", gradient_check(&x, &y, &beta, &DMatrix::zeros(n, c)));

    let report = |name: &str, order: &[usize]| {
        let tail: Vec<usize> = order[n - corrupted.len()..].to_vec();
        let caught = tail.iter().filter(|i| corrupted.contains(i)).count();
        println!("{name}: least credible {tail:?} ({caught}/{} corrupted)", corrupted.len());
    };

    for penalty in [Penalty::GroupL2, Penalty::L1] {
        let start = Instant::now();
        let cfg = LogitPathConfig::default();
        let path = solve_logit_path(&x, &y, &cfg, penalty)?;
        let ranking = rank_instances(&path, &vec![1.0; n]);
        report(
            &format!("logistic {penalty:?} ({:.1?}, {} non-converged)", start.elapsed(), path.nonconverged()),
            &ranking.order,
        );
    }

    let ann = annihilator(&x, None);
    let grid = default_grid(&ann, &y, Penalty::GroupL2, 100, 1e-3)?;
    let linear = solve_path(&ann, &y, &grid, Penalty::GroupL2, &SolverOptions::default());
    report("linear GroupL2", &rank_instances(&linear, &vec![1.0; n]).order);
    Ok(())
}
