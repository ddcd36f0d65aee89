//! Generate a synthetic store, write it as ICIF and CSV, read both back, and
//! sample a few episodes from it.
//!
//! ```text
//! cargo run --example feature_store -- [out_dir]
//! ```

use std::path::PathBuf;

use ici::data::{
    load_features, sample_episode, save_icif, synth_gaussian, write_csv, EpisodeSpec, FeatureFormat, SynthParams,
};

fn main() -> ici::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().display().to_string()));
    let store = synth_gaussian(&SynthParams {
        classes: 6,
        per_class: 30,
        dim: 8,
        separation: 4.0,
        noise_sigma: 1.0,
        seed: 3,
    })?;
    println!("generated: n={} D={} c={}", store.len(), store.dim(), store.class_count);

    let icif = dir.join("example_store.icif");
    let csv = dir.join("example_store.csv");
    save_icif(&store, &icif)?;
    let file = std::fs::File::create(&csv).map_err(|source| ici::IciError::Io {
        path: csv.clone(),
        source,
    })?;
    write_csv(&store, file)?;

    let from_icif = load_features(&icif, FeatureFormat::Icif)?;
    let from_csv = load_features(&csv, FeatureFormat::Csv)?;
    println!("ICIF round trip exact: {}", from_icif.features == store.features);
    println!(
        "CSV round trip max error: {:.2e}",
        (&from_csv.features - &store.features).abs().max()
    );

    for (name, spec) in [
        ("transductive 5-way 1-shot", EpisodeSpec::transductive(5, 1, 15)),
        ("semi-supervised 3-way 5-shot", EpisodeSpec::semi_supervised(3, 5, 10, 10)),
    ] {
        let ep = sample_episode(&store, &spec, 42)?;
        println!(
            "{name}: classes {:?}, support {}, query {}, unlabeled {}",
            ep.classes,
            ep.support_x.nrows(),
            ep.query_x.nrows(),
            ep.unlabeled_x.nrows()
        );
    }
    Ok(())
}
