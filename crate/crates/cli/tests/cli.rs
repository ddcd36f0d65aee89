use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

use ici::data::{episode_seed, load_features, sample_episode, EpisodeSpec, FeatureFormat};

fn ici(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ici"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = ici(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], dir: &Path) -> i32 {
    ici(args, dir).status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const SEPARABLE: &[&str] = &[
    "synth", "--ways", "5", "--per-class", "40", "--dim", "16", "--sep", "10", "--sigma", "0.3", "--seed", "1", "--out",
    "sep.icif",
];

#[test]
fn synth_writes_a_loadable_store() {
    let dir = TempDir::new().unwrap();
    let args = [
        "synth", "--ways", "5", "--per-class", "100", "--dim", "64", "--sep", "6", "--sigma", "1", "--seed", "1", "--out",
    ];
    let stdout = ok(&[&args[..], &["s.icif"]].concat(), dir.path());
    assert!(stdout.contains("n=500 D=64 c=5"), "{stdout}");
    let store = load_features(&dir.path().join("s.icif"), FeatureFormat::Icif).unwrap();
    assert_eq!((store.len(), store.dim(), store.class_count), (500, 64, 5));

    ok(&[&args[..], &["again.icif"]].concat(), dir.path());
    let a = std::fs::read(dir.path().join("s.icif")).unwrap();
    let b = std::fs::read(dir.path().join("again.icif")).unwrap();
    assert_eq!(Sha256::digest(&a), Sha256::digest(&b));

    ok(&[&args[..], &["s.csv"]].concat(), dir.path());
    let csv = load_features(&dir.path().join("s.csv"), FeatureFormat::Csv).unwrap();
    assert_eq!(csv.len(), 500);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&["synth", "--sigma", "-1", "--out", "x.icif"], d), 2);
    assert_eq!(code(&["run", "--episodes", "0"], d), 2);
    assert_eq!(code(&["run", "--selection", "best"], d), 2);
    assert_eq!(code(&["run", "--input", "missing.icif", "--episodes", "1"], d), 3);
    std::fs::write(d.join("bad.toml"), "episodes = 3\nbogus = true\n").unwrap();
    assert_eq!(code(&["run", "--config", "bad.toml"], d), 2);
    std::fs::write(d.join("garbage.icif"), b"not a feature file").unwrap();
    assert_eq!(code(&["run", "--input", "garbage.icif", "--episodes", "1"], d), 3);
    assert_eq!(code(&["theory", "lambda", "--sigma", "1", "--mu", "1", "--eta", "0", "--c", "5", "--n", "20"], d), 2);
}

#[test]
fn separable_episodes_are_solved() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(SEPARABLE, d);
    ok(
        &[
            "run", "--input", "sep.icif", "--episodes", "200", "--ways", "5", "--shots", "1", "--queries", "15", "--mode",
            "transductive", "--variant", "icir", "--out", "r.json", "--csv", "r.csv", "--jobs", "2",
        ],
        d,
    );
    let report = json(&d.join("r.json"));
    let mean = report["runs"][0]["summary"]["mean"].as_f64().unwrap();
    assert!(mean >= 0.99, "mean {mean}");

    let bytes = std::fs::read(d.join("sep.icif")).unwrap();
    let digest = format!("{:x}", Sha256::digest(&bytes));
    assert_eq!(report["header"]["input_sha256"], digest.as_str());
    assert_eq!(report["header"]["seed"], 0);

    let rows = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert_eq!(rows.lines().count(), 201);
}

#[test]
fn comparison_carries_both_strategies() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["run", "--episodes", "30", "--compare", "ra", "--seed", "5", "--out", "c.json"], d);
    let report = json(&d.join("c.json"));
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0]["selection"], "ici");
    assert_eq!(runs[1]["selection"], "ra");
    let ici = runs[0]["summary"]["mean"].as_f64().unwrap();
    let ra = runs[1]["summary"]["mean"].as_f64().unwrap();
    assert!(ici >= ra, "ici {ici} < ra {ra}");
    let gap = report["comparisons"][0]["mean_difference"].as_f64().unwrap();
    assert!((gap - (ici - ra)).abs() < 1e-12);
}

#[test]
fn reports_are_reproducible_from_their_header() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cfg = ok(&["run", "--episodes", "6", "--selection", "cn", "--seed", "11", "--print-config"], d);
    std::fs::write(d.join("run.toml"), cfg).unwrap();
    ok(&["run", "--config", "run.toml", "--out", "a.json"], d);
    ok(&["run", "--config", "run.toml", "--out", "b.json", "--jobs", "3"], d);
    let a = std::fs::read(d.join("a.json")).unwrap();
    let b = std::fs::read(d.join("b.json")).unwrap();
    assert_eq!(a, b);

    // The embedded config alone regenerates the report.
    let header = json(&d.join("a.json"))["header"]["config"].clone();
    let regenerated: ici_cli::RunConfig = serde_json::from_value(header).unwrap();
    std::fs::write(d.join("again.toml"), regenerated.to_toml()).unwrap();
    ok(&["run", "--config", "again.toml", "--out", "c.json"], d);
    assert_eq!(a, std::fs::read(d.join("c.json")).unwrap());
}

#[test]
fn theory_lambda_is_arithmetic() {
    let dir = TempDir::new().unwrap();
    let out = ok(&["theory", "lambda", "--sigma", "1", "--mu", "1", "--eta", "1", "--c", "5", "--n", "20"], dir.path());
    let value: f64 = out.trim().parse().unwrap();
    assert!((value - 2.0 * 100f64.ln().sqrt()).abs() < 1e-12);
}

#[test]
fn noiseless_planted_trials_recover() {
    let dir = TempDir::new().unwrap();
    let out = ok(
        &["theory", "recover", "--trials", "200", "--flips", "2", "--sigma", "0", "--out", "t.csv"],
        dir.path(),
    );
    assert!(out.contains("recovery rate: 1.0\n"), "{out}");
    let log = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(log.lines().count(), 201);
}

#[test]
fn frequency_table_partitions_the_episodes() {
    let dir = TempDir::new().unwrap();
    ok(&["theory", "freq", "--episodes", "10", "--out", "f.csv", "--log", "e.csv"], dir.path());
    let table = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let total: usize = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 10);
    let log = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert_eq!(log.lines().count(), 11);
}

#[test]
fn path_dump_marks_match_the_store() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    // Overlapping classes make some pseudo-labels wrong.
    ok(
        &["synth", "--ways", "5", "--per-class", "40", "--dim", "8", "--sep", "2", "--sigma", "1", "--seed", "4", "--out", "noisy.icif"],
        d,
    );
    let (seed, index) = (9u64, 2u64);
    ok(
        &[
            "path", "--input", "noisy.icif", "--ways", "2", "--shots", "1", "--queries", "4", "--seed", "9", "--index", "2",
            "--out", "p.csv", "--vanish", "v.csv",
        ],
        d,
    );

    let path = std::fs::read_to_string(d.join("p.csv")).unwrap();
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for line in path.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        rows.push((f[1].parse().unwrap(), f[2].parse().unwrap(), f[0].parse().unwrap()));
    }
    let mut ids: Vec<usize> = rows.iter().map(|r| r.0).collect();
    ids.dedup();
    assert_eq!(ids, (0..10).collect::<Vec<_>>());
    for pair in rows.windows(2) {
        if (pair[0].0, pair[0].1) == (pair[1].0, pair[1].1) {
            assert!(pair[1].2 < pair[0].2, "lambda not descending in block");
        }
    }

    let store = load_features(&d.join("noisy.icif"), FeatureFormat::Icif).unwrap();
    let ep = sample_episode(&store, &EpisodeSpec::transductive(2, 1, 4), episode_seed(seed, index)).unwrap();
    let truth: Vec<usize> = ep.support_y.iter().chain(ep.unlabeled_truth()).copied().collect();
    let vanish = std::fs::read_to_string(d.join("v.csv")).unwrap();
    let mut checked = 0;
    for line in vanish.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let i: usize = f[0].parse().unwrap();
        let pseudo: usize = f[3].parse().unwrap();
        let correct: bool = f[4].parse().unwrap();
        assert_eq!(correct, pseudo == truth[i], "instance {i}");
        checked += 1;
    }
    assert_eq!(checked, 10);
}
