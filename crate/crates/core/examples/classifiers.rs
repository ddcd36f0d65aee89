//! Base classifiers on a few-shot episode: l2-regularized logistic
//! regression against k-nearest-neighbours with both metrics.
//!
//! ```text
//! cargo run --release --example classifiers -- [shots]
//! ```

use ici::classify::{default_reg, fit_logreg, fit_predict_knn, predict, Metric, Prediction};
use ici::data::{sample_episode, synth_gaussian, EpisodeSpec, SynthParams};

fn accuracy(preds: &[Prediction], truth: &[usize]) -> f64 {
    preds.iter().zip(truth).filter(|(p, &t)| p.label == t).count() as f64 / truth.len() as f64
}

fn main() -> ici::Result<()> {
    let shots: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let store = synth_gaussian(&SynthParams {
        classes: 10,
        per_class: 40,
        dim: 32,
        separation: 3.0,
        noise_sigma: 1.0,
        seed: 4,
    })?;
    let spec = EpisodeSpec::transductive(5, shots, 15);
    let episodes = 50;
    let mut totals = [0.0; 4];
    let mut confidence = 0.0;
    for seed in 0..episodes {
        let ep = sample_episode(&store, &spec, seed)?;
        let clf = fit_logreg(&ep.support_x, &ep.support_y, 5, default_reg(ep.support_y.len()))?;
        let preds = predict(&clf, &ep.query_x)?;
        totals[0] += accuracy(&preds, &ep.query_y);
        confidence += preds.iter().map(|p| p.confidence()).sum::<f64>() / preds.len() as f64;
        for (slot, (k, metric)) in [(1, Metric::Euclidean), (1, Metric::Cosine), (3, Metric::Euclidean)]
            .into_iter()
            .enumerate()
        {
            let preds = fit_predict_knn(&ep.support_x, &ep.support_y, &ep.query_x, 5, k.min(shots * 5), metric)?;
            totals[slot + 1] += accuracy(&preds, &ep.query_y);
        }
    }
    let e = episodes as f64;
    println!("5-way {shots}-shot, {episodes} episodes");
    println!("logistic regression  {:.3} (mean confidence {:.3})", totals[0] / e, confidence / e);
    println!("1-NN euclidean       {:.3}", totals[1] / e);
    println!("1-NN cosine          {:.3}", totals[2] / e);
    println!("3-NN euclidean       {:.3}", totals[3] / e);
    Ok(())
}
