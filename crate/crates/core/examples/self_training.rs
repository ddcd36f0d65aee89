//! One self-training episode in detail: per-round selections, their
//! pseudo-label precision, and the accuracy before and after.
//!
//! ```text
//! cargo run --release --example self_training -- [seed] [icir|icic]
//! ```

use ici::data::{sample_episode, synth_gaussian, EpisodeSpec, SynthParams};
use ici::selftrain::{run_episode, LoopConfig, Variant};

fn main() -> ici::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let variant = match std::env::args().nth(2).as_deref() {
        Some("icic") => Variant::Icic,
        _ => Variant::Icir,
    };
    let store = synth_gaussian(&SynthParams {
        classes: 10,
        per_class: 40,
        dim: 32,
        separation: 3.0,
        noise_sigma: 1.0,
        seed: 11,
    })?;
    let ep = sample_episode(&store, &EpisodeSpec::transductive(5, 1, 15), seed)?;
    let cfg = LoopConfig {
        variant,
        ..LoopConfig::default()
    };
    let r = run_episode(&ep, &cfg)?;

    println!("episode seed {seed}, variant {variant:?}, classes {:?}", ep.classes);
    for (k, rec) in r.records.iter().enumerate() {
        let wrong: Vec<usize> = rec
            .selected
            .iter()
            .zip(&rec.correct)
            .filter(|(_, &ok)| !ok)
            .map(|(&i, _)| i)
            .collect();
        println!(
            "round {}: moved {} instances, precision {:.3}, wrong pseudo-labels at {:?}",
            k + 1,
            rec.selected.len(),
            rec.precision().unwrap_or(f64::NAN),
            wrong
        );
    }
    println!(
        "query accuracy {:.3} -> {:.3} ({} non-converged path points)",
        r.base_accuracy, r.query_accuracy, r.nonconverged
    );
    Ok(())
}
