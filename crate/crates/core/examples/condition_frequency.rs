//! How often the identifiability conditions hold on real episodes, whether
//! self-training helped in each bucket, and the residual distribution of one
//! fitted episode.
//!
//! ```text
//! cargo run --release --example condition_frequency -- [episodes]
//! ```

use ici::data::{one_hot, sample_episode, synth_gaussian, EpisodeSpec, SynthParams};
use ici::dimreduce::lle_fit_transform;
use ici::path::{annihilator, default_grid, solve_path, Penalty, SolverOptions};
use ici::selftrain::LoopConfig;
use ici::theory::{condition_frequency_study, fit_residuals, residual_histogram};

fn main() -> ici::Result<()> {
    let episodes: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let store = synth_gaussian(&SynthParams::default())?;
    let spec = EpisodeSpec::transductive(5, 1, 15);
    let table = condition_frequency_study(&store, &spec, &LoopConfig::default(), episodes, 0)?;
    println!("{:<10} {:>8} {:>6} {:>6}", "bucket", "improved", "total", "ratio");
    for row in &table.rows {
        let ratio = row.ratio().map_or("-".into(), |r| format!("{r:.2}"));
        println!("{:<10} {:>8} {:>6} {:>6}", row.bucket.label(), row.improved, row.total, ratio);
    }

    // Residuals of the support-labeled fit at the smallest penalty.
    let ep = sample_episode(&store, &spec, 0)?;
    let z = lle_fit_transform(&ep.query_x, 5, 5, 1e-3)?.z;
    let y = one_hot(&ep.query_y, 5)?.into_inner();
    let ann = annihilator(&z, None);
    let grid = default_grid(&ann, &y, Penalty::GroupL2, 50, 1e-1)?;
    let path = solve_path(&ann, &y, &grid, Penalty::GroupL2, &SolverOptions::default());
    let residuals = fit_residuals(&z, &y, path.gammas.last().expect("non-empty grid"));
    let hist = residual_histogram(&residuals, 21)?;
    println!("residuals: mean {:.3e}, variance {:.3e}", hist.mean, hist.variance);
    let peak = *hist.counts.iter().max().unwrap_or(&1);
    for (k, &count) in hist.counts.iter().enumerate() {
        let (lo, hi) = hist.edges(k);
        println!("[{lo:>7.3}, {hi:>7.3}) {}", "#".repeat(40 * count / peak.max(1)));
    }
    Ok(())
}
