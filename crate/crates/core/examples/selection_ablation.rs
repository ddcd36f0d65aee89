//! Compare selection strategies on paired synthetic episodes.
//!
//! ```text
//! cargo run --release --example selection_ablation -- [episodes] [sigma] [sep] [dim]
//! ```

use std::time::Instant;

use ici::data::{synth_gaussian, EpisodeSpec, SynthParams};
use ici::selftrain::{evaluate, run_episodes, LoopConfig, Selection};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> ici::Result<()> {
    let episodes: usize = arg(1, 100);
    let sigma: f64 = arg(2, 1.0);
    let separation: f64 = arg(3, 3.0);
    let dim: usize = arg(4, 32);
    let store = synth_gaussian(&SynthParams {
        classes: 20,
        per_class: 60,
        dim,
        separation,
        noise_sigma: sigma,
        seed: 7,
    })?;
    let spec = EpisodeSpec::transductive(5, 1, 15);
    println!("{episodes} episodes, sigma={sigma} sep={separation} D={dim}");
    for selection in [Selection::Ici, Selection::Cn, Selection::Co, Selection::Nn, Selection::Ra] {
        let cfg = LoopConfig {
            selection,
            ..LoopConfig::default()
        };
        let start = Instant::now();
        let results = run_episodes(&store, &spec, &cfg, episodes, 2024, 1)?;
        let report = evaluate(&results)?;
        let precision: Vec<String> = report
            .selection_precision
            .iter()
            .map(|p| p.map_or("-".into(), |v| format!("{v:.3}")))
            .collect();
        println!(
            "{:>3}: acc {:.4} +- {:.4} (base {:.4}) precision [{}] {:.1?}",
            selection.as_str(),
            report.mean,
            report.ci95,
            report.mean_base,
            precision.join(", "),
            start.elapsed()
        );
    }
    Ok(())
}
