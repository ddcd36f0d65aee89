//! Planted support-recovery trials at the theorem's penalty.
//!
//! ```text
//! cargo run --release --example identifiability -- [trials] [sigma] [flips]
//! ```

use ici::theory::{recovery_batch, TrialParams};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn rate(hits: usize, total: usize) -> String {
    if total == 0 {
        "-".into()
    } else {
        format!("{hits}/{total} = {:.3}", hits as f64 / total as f64)
    }
}

fn main() -> ici::Result<()> {
    let trials: usize = arg(1, 200);
    let params = TrialParams {
        sigma: arg(2, 0.05),
        flips: arg(3, 2),
        ..TrialParams::default()
    };
    let reports = recovery_batch(&params, trials, 17)?;

    let c12: Vec<_> = reports.iter().filter(|t| t.conditions.c1 && t.conditions.c2).collect();
    let all: Vec<_> = c12.iter().filter(|t| t.conditions.c3).collect();
    let subset = c12.iter().filter(|t| t.outcome.no_false_positive).count();
    let exact = all.iter().filter(|t| t.outcome.sign_consistent).count();
    let bounded = all.iter().filter(|t| t.within_h == Some(true)).count();
    let implied = reports
        .iter()
        .filter(|t| !t.outcome.no_false_positive || t.outcome.instances_subset)
        .count();

    println!("{trials} trials: n={} d={} c={} flips={} sigma={}", params.n, params.d, params.c, params.flips, params.sigma);
    println!("C1 and C2 verified:     {}", c12.len());
    println!("  no false positives:   {}", rate(subset, c12.len()));
    println!("C1, C2 and C3 verified: {}", all.len());
    println!("  sign-consistent:      {}", rate(exact, all.len()));
    println!("  error within h:       {}", rate(bounded, all.len()));
    println!("S_hat in S => O_hat in O: {}", rate(implied, reports.len()));
    Ok(())
}
