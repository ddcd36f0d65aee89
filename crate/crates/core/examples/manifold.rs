//! LLE against PCA on a noisy spiral embedded in 10 dimensions: LLE unrolls
//! it into a monotone 1-d coordinate, PCA folds it. Larger neighbourhoods
//! start bridging adjacent arms and the unrolling breaks down.
//!
//! ```text
//! cargo run --example manifold -- [neighbors]
//! ```

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ici::dimreduce::{lle_fit_transform, lle_weights, pca_fit_transform};

/// Fraction of consecutive pairs kept in order
/// (or all reversed).
fn order_agreement(z: &[f64]) -> f64 {
    let up = z.windows(2).filter(|w| w[1] > w[0]).count();
    let pairs = (z.len() - 1) as f64;
    up.max(z.len() - 1 - up) as f64 / pairs
}

fn main() -> ici::Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let n = 120;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let x = DMatrix::from_fn(n, 10, |i, j| {
        let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * i as f64 / n as f64);
        let v = match j {
            0 => t * t.cos(),
            1 => t * t.sin(),
            _ => 0.0,
        };
        v / 10.0 + noise.sample(&mut rng)
    });

    let w = lle_weights(&x, k, 1e-3)?;
    let worst = (0..n).map(|i| (w.row(i).sum() - 1.0).abs()).fold(0.0, f64::max);
    println!("LLE weights: {k} neighbors, max |row sum - 1| = {worst:.1e}");

    let lle = lle_fit_transform(&x, 1, k, 1e-3)?;
    let pca = pca_fit_transform(&x, 1)?;
    let col = |m: &DMatrix<f64>| m.column(0).iter().copied().collect::<Vec<f64>>();
    println!("order kept along the spiral: LLE {:.3}, PCA {:.3}", order_agreement(&col(&lle.z)), order_agreement(&col(&pca.z)));
    Ok(())
}
