//! Linear regularization path on a toy problem with a few corrupted labels:
//! the corrupted rows leave zero first and rank last.
//!
//! ```text
//! cargo run --example regularization_path -- [path.csv]
//! ```

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ici::data::one_hot;
use ici::path::{annihilator, default_grid, kkt_check, rank_instances, solve_path, write_path_csv, Penalty, SolverOptions};

fn main() -> ici::Result<()> {
    let (n, c) = (24, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let truth: Vec<usize> = (0..n).map(|i| i % c).collect();
    // Two informative coordinates per class plus noise.
    let x = DMatrix::from_fn(n, 2 * c, |i, j| {
        let signal = if j / 2 == truth[i] { 2.0 } else { 0.0 };
        signal + noise.sample(&mut rng)
    });
    let mut labels = truth.clone();
    let corrupted = [3, 10, 17];
    for &i in &corrupted {
        labels[i] = (labels[i] + 1) % c;
    }
    let y = one_hot(&labels, c)?.into_inner();

    let ann = annihilator(&x, None);
    let grid = default_grid(&ann, &y, Penalty::GroupL2, 100, 1e-3)?;
    let path = solve_path(&ann, &y, &grid, Penalty::GroupL2, &SolverOptions::default());
    let last = path.gammas.len() - 1;
    let kkt = kkt_check(&ann, &y, &path.gammas[last], path.lambdas[last], Penalty::GroupL2);
    println!(
        "grid {:.3e} .. {:.3e}, all points converged: {}, KKT at the smallest lambda: active {:.1e}, slack {:.1e}",
        grid.max(),
        grid.min(),
        path.nonconverged() == 0,
        kkt.active_residual,
        kkt.inactive_excess
    );

    let ranking = rank_instances(&path, &vec![1.0; n]);
    println!("rank  instance  vanish_lambda  corrupted");
    for (r, &i) in ranking.order.iter().enumerate() {
        println!("{r:>4}  {i:>8}  {:>13.4e}  {}", path.vanish_lambda[i], corrupted.contains(&i));
    }

    if let Some(out) = std::env::args().nth(1) {
        let file = std::fs::File::create(&out).expect("writable output path");
        write_path_csv(&path, std::io::BufWriter::new(file)).expect("path written");
        println!("path written to {out}");
    }
    Ok(())
}
