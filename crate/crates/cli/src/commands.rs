use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use ici::data::{
    episode_seed, read_csv, read_icif, sample_episode, save_icif, synth_gaussian, write_csv, write_icif, EpisodeMode,
    FeatureFormat, FeatureStore, SynthParams,
};
use ici::dimreduce::ReduceMethod;
use ici::path::{write_path_csv, write_vanish_csv, Penalty};
use ici::selftrain::{evaluate, first_round_path, run_episodes, AccuracyReport, ClassifierKind, EpisodeResult, Selection, Variant};
use ici::theory::{
    condition_frequency_study, recovery_batch, theorem_lambda, write_frequency_csv, write_trial_csv, FrequencyTable,
    TrialParams,
};

use crate::config::{parse_name, RunConfig};
use crate::error::{io_error, CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "ici", version, about = "Instance credibility inference for few-shot self-training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a Gaussian-cluster feature store.
    Synth(SynthArgs),
    /// Run self-training episodes and report query accuracy.
    Run(RunArgs),
    /// Identifiability studies.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Dump the regularization path of one episode's first round.
    Path(PathArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of classes.
    #[arg(long, default_value_t = 5)]
    pub ways: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Minimum distance between class means.
    #[arg(long, default_value_t = 6.0, allow_negative_numbers = true)]
    pub sep: f64,
    /// Per-coordinate noise standard deviation.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; `.csv` writes CSV, anything else ICIF.
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings shared by every command that samples episodes. Each flag
/// overrides the matching key of the config file.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ways: Option<usize>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub unlabeled: Option<usize>,
    /// transductive | semi-supervised
    #[arg(long, value_parser = parse_name::<EpisodeMode>)]
    pub mode: Option<EpisodeMode>,
    /// icir | icic
    #[arg(long, value_parser = parse_name::<Variant>)]
    pub variant: Option<Variant>,
    /// ici | ra | nn | co | cn
    #[arg(long, value_parser = parse_name::<Selection>)]
    pub selection: Option<Selection>,
    /// group_l2 | l1
    #[arg(long, value_parser = parse_name::<Penalty>)]
    pub penalty: Option<Penalty>,
    /// lle | pca | none
    #[arg(long, value_parser = parse_name::<ReduceMethod>)]
    pub reduce: Option<ReduceMethod>,
    /// Reduced dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// logreg | knn
    #[arg(long, value_parser = parse_name::<ClassifierKind>)]
    pub classifier: Option<ClassifierKind>,
    /// Instances selected per class per round.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub total_cap: Option<usize>,
    #[arg(long)]
    pub grid_count: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// L2-normalize feature rows.
    #[arg(long)]
    pub normalize: bool,
}

impl Overrides {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag {
                    cfg.$($field)+ = v;
                }
            };
        }
        if let Some(p) = &self.input {
            cfg.input = Some(p.clone());
        }
        set!(episodes => episodes);
        set!(seed => seed);
        set!(ways => episode.ways);
        set!(shots => episode.shots);
        set!(queries => episode.queries);
        set!(unlabeled => episode.unlabeled);
        set!(mode => episode.mode);
        set!(variant => loop_cfg.variant);
        set!(selection => loop_cfg.selection);
        set!(penalty => loop_cfg.penalty);
        set!(reduce => loop_cfg.reduce);
        set!(dim => loop_cfg.d);
        set!(classifier => loop_cfg.classifier.kind);
        set!(per_class => loop_cfg.per_class_per_iter);
        set!(grid_count => loop_cfg.grid_count);
        set!(alpha => loop_cfg.alpha);
        if self.max_iters.is_some() {
            cfg.loop_cfg.max_iters = self.max_iters;
        }
        if self.total_cap.is_some() {
            cfg.loop_cfg.total_cap = self.total_cap;
        }
        if self.normalize {
            cfg.loop_cfg.normalize = true;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Extra selection strategies run on the same episodes, comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_name::<Selection>)]
    pub compare: Option<Vec<Selection>>,
    #[arg(long)]
    pub max_nonconverged: Option<f64>,
    /// JSON report destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-episode CSV destination.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Subcommand, Debug)]
pub enum TheoryCommand {
    /// Planted support-recovery trials at the theorem's penalty.
    Recover(RecoverArgs),
    /// How often the conditions hold on episodes, and whether the loop helps.
    Freq(FreqArgs),
    /// Evaluate the theorem's penalty level.
    Lambda(LambdaArgs),
}

#[derive(Args, Debug)]
pub struct RecoverArgs {
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub c: usize,
    #[arg(long, default_value_t = 2)]
    pub flips: usize,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-trial CSV log.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FreqArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Frequency table CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-episode CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LambdaArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub eta: f64,
    #[arg(long)]
    pub c: usize,
    #[arg(long)]
    pub n: usize,
}

#[derive(Args, Debug)]
pub struct PathArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Episode index under the master seed.
    #[arg(long, default_value_t = 0)]
    pub index: u64,
    /// Path CSV destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-instance vanish-point CSV with selection and correctness marks.
    #[arg(long)]
    pub vanish: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Theory(TheoryCommand::Recover(a)) => cmd_recover(&a),
        Command::Theory(TheoryCommand::Freq(a)) => cmd_freq(&a),
        Command::Theory(TheoryCommand::Lambda(a)) => cmd_lambda(&a),
        Command::Path(a) => cmd_path(&a),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn finish(path: &Path, mut w: impl Write, result: std::io::Result<()>) -> CliResult<()> {
    result.and_then(|()| w.flush()).map_err(|e| io_error(path, e))
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let store = synth_gaussian(&SynthParams {
        classes: a.ways,
        per_class: a.per_class,
        dim: a.dim,
        separation: a.sep,
        noise_sigma: a.sigma,
        seed: a.seed,
    })?;
    match FeatureFormat::from_path(&a.out) {
        Some(FeatureFormat::Csv) => {
            let mut w = create(&a.out)?;
            write_csv(&store, &mut w)?;
            w.flush().map_err(|e| io_error(&a.out, e))?;
        }
        _ => save_icif(&store, &a.out)?,
    }
    println!("n={} D={} c={}", store.len(), store.dim(), store.class_count);
    Ok(())
}

/// The feature store plus a description and SHA-256 of the bytes it came
/// from. Synthetic stores are hashed through their ICIF encoding.
pub struct LoadedStore {
    pub store: FeatureStore,
    pub source: String,
    pub sha256: String,
}

fn hex_digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn load_store(cfg: &RunConfig) -> CliResult<LoadedStore> {
    match &cfg.input {
        Some(path) => {
            let format = FeatureFormat::from_path(path).ok_or_else(|| {
                CliError::config(format!("{}: unknown feature format (use .icif or .csv)", path.display()))
            })?;
            let bytes =
                std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
            let meta = path.display().to_string();
            let store = match format {
                FeatureFormat::Csv => read_csv(bytes.as_slice(), &meta)?,
                FeatureFormat::Icif => read_icif(bytes.as_slice(), &meta)?,
            };
            Ok(LoadedStore {
                store,
                source: meta,
                sha256: hex_digest(&bytes),
            })
        }
        None => {
            let store = synth_gaussian(&cfg.synth)?;
            let mut bytes = Vec::new();
            write_icif(&store, &mut bytes)?;
            Ok(LoadedStore {
                store,
                source: "synthetic".into(),
                sha256: hex_digest(&bytes),
            })
        }
    }
}

/// Everything needed to regenerate a report.
#[derive(Debug, Serialize)]
pub struct ReportHeader {
    pub tool: String,
    pub config: RunConfig,
    pub seed: u64,
    pub input: String,
    pub input_sha256: String,
}

#[derive(Debug, Serialize)]
pub struct SelectionRun {
    pub selection: Selection,
    pub summary: AccuracyReport,
    /// Episodes with at least one non-converged path point.
    pub nonconverged_episodes: usize,
}

/// Paired comparison of the primary strategy against another one on the
/// same episodes.
#[derive(Debug, Serialize)]
pub struct PairedComparison {
    pub selection: Selection,
    /// Primary mean minus this strategy's mean.
    pub mean_difference: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub header: ReportHeader,
    pub runs: Vec<SelectionRun>,
    pub comparisons: Vec<PairedComparison>,
}

fn paired(primary: &[EpisodeResult], other: &[EpisodeResult], selection: Selection, gap: f64) -> PairedComparison {
    let (mut wins, mut ties, mut losses) = (0, 0, 0);
    for (a, b) in primary.iter().zip(other) {
        match a.query_accuracy.total_cmp(&b.query_accuracy) {
            std::cmp::Ordering::Greater => wins += 1,
            std::cmp::Ordering::Equal => ties += 1,
            std::cmp::Ordering::Less => losses += 1,
        }
    }
    PairedComparison {
        selection,
        mean_difference: gap,
        wins,
        ties,
        losses,
    }
}

fn write_episode_csv(path: &Path, runs: &[(Selection, Vec<EpisodeResult>)]) -> CliResult<()> {
    let mut w = create(path)?;
    let result = (|| {
        writeln!(w, "selection,episode,seed,query_accuracy,base_accuracy,iterations,selected,correct,nonconverged")?;
        for (selection, results) in runs {
            for (i, r) in results.iter().enumerate() {
                let selected: usize = r.records.iter().map(|x| x.selected.len()).sum();
                let correct: usize = r.records.iter().map(|x| x.correct.iter().filter(|&&c| c).count()).sum();
                writeln!(
                    w,
                    "{},{i},{},{},{},{},{selected},{correct},{}",
                    selection.as_str(),
                    r.seed,
                    r.query_accuracy,
                    r.base_accuracy,
                    r.iterations,
                    r.nonconverged
                )?;
            }
        }
        Ok(())
    })();
    finish(path, w, result)
}

pub fn resolve_run(a: &RunArgs) -> CliResult<RunConfig> {
    let mut cfg = a.overrides.resolve()?;
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    if let Some(c) = &a.compare {
        cfg.compare = c.clone();
    }
    if let Some(m) = a.max_nonconverged {
        cfg.max_nonconverged = m;
    }
    if a.out.is_some() {
        cfg.output = a.out.clone();
    }
    if a.csv.is_some() {
        cfg.csv = a.csv.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn build_report(cfg: &RunConfig, loaded: &LoadedStore) -> CliResult<(RunReport, Vec<(Selection, Vec<EpisodeResult>)>)> {
    let mut results = Vec::new();
    for selection in std::iter::once(cfg.loop_cfg.selection).chain(cfg.compare.iter().copied()) {
        let mut lc = cfg.loop_cfg;
        lc.selection = selection;
        let r = run_episodes(&loaded.store, &cfg.episode, &lc, cfg.episodes, cfg.seed, cfg.jobs)?;
        results.push((selection, r));
    }
    let mut runs = Vec::with_capacity(results.len());
    for (selection, r) in &results {
        runs.push(SelectionRun {
            selection: *selection,
            summary: evaluate(r)?,
            nonconverged_episodes: r.iter().filter(|e| !e.converged).count(),
        });
    }
    let primary_mean = runs[0].summary.mean;
    let comparisons = results
        .iter()
        .zip(&runs)
        .skip(1)
        .map(|((s, r), run)| paired(&results[0].1, r, *s, primary_mean - run.summary.mean))
        .collect();
    let report = RunReport {
        header: ReportHeader {
            tool: format!("ici {}", env!("CARGO_PKG_VERSION")),
            config: cfg.clone(),
            seed: cfg.seed,
            input: loaded.source.clone(),
            input_sha256: loaded.sha256.clone(),
        },
        runs,
        comparisons,
    };
    Ok((report, results))
}

pub fn cmd_run(a: &RunArgs) -> CliResult<()> {
    let cfg = resolve_run(a)?;
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let loaded = load_store(&cfg)?;
    let (report, results) = build_report(&cfg, &loaded)?;

    if let Some(path) = &cfg.output {
        let mut w = create(path)?;
        let result = serde_json::to_writer_pretty(&mut w, &report)
            .map_err(std::io::Error::from)
            .and_then(|()| writeln!(w));
        finish(path, w, result)?;
    }
    if let Some(path) = &cfg.csv {
        write_episode_csv(path, &results)?;
    }

    println!(
        "{} episodes, {}-way {}-shot {} (input {} sha256 {})",
        cfg.episodes,
        cfg.episode.ways,
        cfg.episode.shots,
        match cfg.episode.mode {
            EpisodeMode::Transductive => "transductive",
            EpisodeMode::SemiSupervised => "semi-supervised",
        },
        loaded.source,
        &loaded.sha256[..12]
    );
    for run in &report.runs {
        let s = &run.summary;
        println!(
            "{:>3}: mean {:.4} +- {:.4} (base {:.4}, rounds {:.2})",
            run.selection.as_str(),
            s.mean,
            s.ci95,
            s.mean_base,
            s.mean_iterations
        );
    }
    for c in &report.comparisons {
        println!(
            "{} - {}: {:+.4} (wins {}, ties {}, losses {})",
            cfg.loop_cfg.selection.as_str(),
            c.selection.as_str(),
            c.mean_difference,
            c.wins,
            c.ties,
            c.losses
        );
    }

    for run in &report.runs {
        let frac = run.nonconverged_episodes as f64 / cfg.episodes as f64;
        if frac > cfg.max_nonconverged {
            return Err(CliError::numerical(format!(
                "{}: {} of {} episodes hit the solver iteration limit (allowed fraction {})",
                run.selection.as_str(),
                run.nonconverged_episodes,
                cfg.episodes,
                cfg.max_nonconverged
            )));
        }
    }
    Ok(())
}

pub fn cmd_recover(a: &RecoverArgs) -> CliResult<()> {
    if a.trials == 0 {
        return Err(CliError::config("trials must be >= 1"));
    }
    let params = TrialParams {
        n: a.n,
        d: a.d,
        c: a.c,
        flips: a.flips,
        sigma: a.sigma,
        ..TrialParams::default()
    };
    params.validate()?;
    let trials = recovery_batch(&params, a.trials, a.seed)?;
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        let result = write_trial_csv(&trials, &mut w);
        finish(path, w, result)?;
    }
    let total = trials.len();
    let rate = |hits: usize, of: usize| if of == 0 { f64::NAN } else { hits as f64 / of as f64 };
    let verified: Vec<_> = trials
        .iter()
        .filter(|t| t.conditions.c1 && t.conditions.c2 && t.conditions.c3)
        .collect();
    let c12: Vec<_> = trials.iter().filter(|t| t.conditions.c1 && t.conditions.c2).collect();
    let recovered = trials.iter().filter(|t| t.outcome.sign_consistent).count();
    println!("trials: {total}");
    println!("recovery rate: {:?}", rate(recovered, total));
    println!(
        "conditions C1-C3 verified: {} (recovery rate {:?})",
        verified.len(),
        rate(verified.iter().filter(|t| t.outcome.sign_consistent).count(), verified.len())
    );
    println!(
        "conditions C1-C2 verified: {} (no false positives {:?})",
        c12.len(),
        rate(c12.iter().filter(|t| t.outcome.no_false_positive).count(), c12.len())
    );
    Ok(())
}

fn write_frequency_log(path: &Path, table: &FrequencyTable) -> CliResult<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut w = create(path)?;
    let result = (|| {
        writeln!(w, "seed,bucket,sigma_hat,C_min,eta,mu,h,base_accuracy,loop_accuracy,improved")?;
        for e in &table.episodes {
            let c = &e.conditions;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                e.seed,
                e.bucket.label(),
                e.sigma_hat,
                opt(c.c_min),
                opt(c.eta),
                c.mu,
                opt(c.h),
                e.base_accuracy,
                e.loop_accuracy,
                e.improved
            )?;
        }
        Ok(())
    })();
    finish(path, w, result)
}

pub fn cmd_freq(a: &FreqArgs) -> CliResult<()> {
    let cfg = a.overrides.resolve()?;
    cfg.validate()?;
    let loaded = load_store(&cfg)?;
    let table = condition_frequency_study(&loaded.store, &cfg.episode, &cfg.loop_cfg, cfg.episodes, cfg.seed)?;
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        let result = write_frequency_csv(&table, &mut w);
        finish(path, w, result)?;
    }
    if let Some(path) = &a.log {
        write_frequency_log(path, &table)?;
    }
    println!("bucket,improved,total");
    for row in &table.rows {
        println!("{},{},{}", row.bucket.label(), row.improved, row.total);
    }
    Ok(())
}

pub fn cmd_lambda(a: &LambdaArgs) -> CliResult<()> {
    println!("{}", theorem_lambda(a.sigma, a.mu, a.eta, a.c, a.n)?);
    Ok(())
}

pub fn cmd_path(a: &PathArgs) -> CliResult<()> {
    let cfg = a.overrides.resolve()?;
    cfg.validate()?;
    let loaded = load_store(&cfg)?;
    let ep = sample_episode(&loaded.store, &cfg.episode, episode_seed(cfg.seed, a.index))?;
    let (path, marks) = first_round_path(&ep, &cfg.loop_cfg)?;
    let mut w = create(&a.out)?;
    let result = write_path_csv(&path, &mut w);
    finish(&a.out, w, result)?;
    if let Some(vanish) = &a.vanish {
        let mut w = create(vanish)?;
        let result = write_vanish_csv(&path, Some(&marks), &mut w);
        finish(vanish, w, result)?;
    }
    let wrong = marks.iter().filter(|m| m.correct == Some(false)).count();
    let selected = marks.iter().filter(|m| m.selected).count();
    println!(
        "instances={} grid={} selected={} wrong_pseudo_labels={} nonconverged={}",
        path.n(),
        path.lambdas.len(),
        selected,
        wrong,
        path.nonconverged()
    );
    Ok(())
}
