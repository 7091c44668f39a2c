//! `eals` — dataset preparation, training, evaluation, and timing runs for
//! the implicit-feedback factorization library.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation/parse error, 3 i/o
//! error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use eals_core::baselines::{als_sweep, als_train, bpr_train, AlsConfig, BprConfig};
use eals_core::eals::{sweep, train as eals_train, TrainConfig, TrainTrace};
use eals_core::eval::{evaluate_offline, evaluate_online, EvalReport};
use eals_core::ingest::{
    build_dataset, kcore_filter, load_interactions, split_chronological, split_leave_one_out,
    InputFormat, InteractionDataset, SplitPair,
};
use eals_core::model::FactorModel;
use eals_core::online::OnlineConfig;
use eals_core::synthetic::power_law_dataset;
use eals_core::weighting::{confidence_vector, item_popularity};

#[derive(Parser)]
#[command(name = "eals", version, about = "Implicit-feedback matrix factorization toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Learner {
    Eals,
    Als,
    Bpr,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Holdout {
    None,
    Loo,
    Chrono,
}

#[derive(Subcommand)]
enum Cmd {
    /// Filter a raw interaction log and write a dataset snapshot.
    Prepare {
        /// Raw log: one `user<sep>item<sep>timestamp` line per interaction.
        input: PathBuf,
        /// Output dataset snapshot path.
        output: PathBuf,
        /// Keep only users and items with at least this many interactions
        /// (applied iteratively until stable).
        #[arg(long, default_value_t = 10)]
        kcore: usize,
        /// Input delimiter: tsv or csv.
        #[arg(long, default_value = "tsv")]
        format: String,
    },
    /// Train a model on a dataset snapshot.
    Train {
        dataset: PathBuf,
        /// Output model snapshot path; `<path>.trace.jsonl` and
        /// `<path>.manifest.json` are written next to it.
        model_out: PathBuf,
        #[arg(long, value_enum, default_value_t = Learner::Eals)]
        learner: Learner,
        #[arg(long, default_value_t = 64)]
        factors: usize,
        /// L2 regularization strength.
        #[arg(long, default_value_t = 0.01)]
        reg: f64,
        /// Total missing-data confidence mass (eALS); for ALS the uniform
        /// missing weight is c0 / N.
        #[arg(long, default_value_t = 64.0)]
        c0: f64,
        /// Popularity exponent of the confidence weights; 0 gives uniform
        /// weighting.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Maximum sweeps (epochs for BPR).
        #[arg(long, default_value_t = 50)]
        iters: usize,
        /// Relative objective-change stopping tolerance.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, env = "EALS_SEED", default_value_t = 42)]
        seed: u64,
        #[arg(long, env = "EALS_THREADS", default_value_t = 1)]
        threads: usize,
        /// SGD step size (BPR only).
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        /// Hold out test data before training: none, loo (leave-one-out),
        /// or chrono (latest fraction).
        #[arg(long, value_enum, default_value_t = Holdout::None)]
        holdout: Holdout,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
    },
    /// Score a trained model on a held-out split of the dataset.
    EvalOffline {
        model: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        cutoff: usize,
        /// Remove a user's training items from their ranking.
        #[arg(long)]
        exclude_train: bool,
        #[arg(long, value_enum, default_value_t = Holdout::Loo)]
        holdout: Holdout,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        /// Write per-event records as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the chronological test stream with incremental updates.
    EvalOnline {
        model: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        w_new: f64,
        #[arg(long, default_value_t = 1)]
        online_iters: usize,
        #[arg(long, default_value_t = 100)]
        cutoff: usize,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 64.0)]
        c0: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0.01)]
        reg: f64,
        #[arg(long, env = "EALS_SEED", default_value_t = 42)]
        seed: u64,
        /// Write per-event records as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-history-length aggregates as CSV.
        #[arg(long)]
        breakdown_out: Option<PathBuf>,
    },
    /// Time one training sweep of eALS and ALS on seeded synthetic data.
    Bench {
        /// Factor counts to sweep over.
        #[arg(long, value_delimiter = ',', default_values_t = vec![16usize, 32, 64])]
        factors_list: Vec<usize>,
        /// Synthetic dataset shape: users items interactions.
        #[arg(long, num_args = 3, default_values_t = vec![2000usize, 1000, 40_000])]
        synthetic: Vec<usize>,
        #[arg(long, env = "EALS_SEED", default_value_t = 42)]
        seed: u64,
        /// Write the timing table as CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-item missing-data confidences for a dataset.
    Confidence {
        dataset: PathBuf,
        #[arg(long, default_value_t = 64.0)]
        c0: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
}

struct CliError {
    code: i32,
    msg: String,
}

impl From<eals_core::Error> for CliError {
    fn from(e: eals_core::Error) -> Self {
        let code = match e {
            eals_core::Error::Io { .. } => 3,
            _ => 2,
        };
        CliError { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: 3, msg: e.to_string() }
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError { code: 2, msg: msg.into() }
}

/// Everything needed to reproduce a run: the full parameter set, a content
/// hash of the input dataset, and the software version.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: String,
    dataset: String,
    dataset_sha256: String,
    seed: u64,
    params: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    fn new(command: &str, dataset: &Path, seed: u64) -> Result<Self, CliError> {
        let bytes = std::fs::read(dataset)?;
        let digest = Sha256::digest(&bytes);
        Ok(RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            dataset: dataset.display().to_string(),
            dataset_sha256: format!("{digest:x}"),
            seed,
            params: BTreeMap::new(),
        })
    }

    fn param(&mut self, key: &str, value: impl Serialize) {
        self.params.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable param"),
        );
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).expect("serializable manifest");
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.msg);
            std::process::exit(e.code);
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Prepare { input, output, kcore, format } => cmd_prepare(&input, &output, kcore, &format),
        Cmd::Train {
            dataset,
            model_out,
            learner,
            factors,
            reg,
            c0,
            alpha,
            iters,
            tol,
            seed,
            threads,
            learning_rate,
            holdout,
            test_fraction,
        } => cmd_train(TrainArgs {
            dataset,
            model_out,
            learner,
            factors,
            reg,
            c0,
            alpha,
            iters,
            tol,
            seed,
            threads,
            learning_rate,
            holdout,
            test_fraction,
        }),
        Cmd::EvalOffline {
            model,
            dataset,
            cutoff,
            exclude_train,
            holdout,
            test_fraction,
            out,
        } => cmd_eval_offline(&model, &dataset, cutoff, exclude_train, holdout, test_fraction, out.as_deref()),
        Cmd::EvalOnline {
            model,
            dataset,
            w_new,
            online_iters,
            cutoff,
            test_fraction,
            c0,
            alpha,
            reg,
            seed,
            out,
            breakdown_out,
        } => cmd_eval_online(OnlineArgs {
            model,
            dataset,
            w_new,
            online_iters,
            cutoff,
            test_fraction,
            c0,
            alpha,
            reg,
            seed,
            out,
            breakdown_out,
        }),
        Cmd::Bench { factors_list, synthetic, seed, out } => {
            cmd_bench(&factors_list, &synthetic, seed, out.as_deref())
        }
        Cmd::Confidence { dataset, c0, alpha } => cmd_confidence(&dataset, c0, alpha),
    }
}

fn cmd_prepare(input: &Path, output: &Path, kcore: usize, format: &str) -> Result<(), CliError> {
    let format: InputFormat = format.parse()?;
    let raw = load_interactions(input, format)?;
    let filtered = kcore_filter(&raw, kcore);
    let ds = build_dataset(&filtered);
    ds.save_snapshot(output)?;
    if ds.nnz() == 0 {
        return Err(validation(format!(
            "no interactions survive the {kcore}-core filter; wrote an empty snapshot"
        )));
    }
    println!(
        "prepared {} users x {} items, {} interactions (k-core {})",
        ds.num_users(),
        ds.num_items(),
        ds.nnz(),
        kcore
    );
    Ok(())
}

struct TrainArgs {
    dataset: PathBuf,
    model_out: PathBuf,
    learner: Learner,
    factors: usize,
    reg: f64,
    c0: f64,
    alpha: f64,
    iters: usize,
    tol: f64,
    seed: u64,
    threads: usize,
    learning_rate: f64,
    holdout: Holdout,
    test_fraction: f64,
}

/// Rebuilds the deterministic holdout split so that `train` and the eval
/// commands agree on it without a shared split file.
fn make_split(ds: &InteractionDataset, holdout: Holdout, test_fraction: f64) -> Result<SplitPair, CliError> {
    match holdout {
        Holdout::None => Err(validation("this command needs --holdout loo or chrono")),
        Holdout::Loo => Ok(split_leave_one_out(ds)),
        Holdout::Chrono => {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(validation("--test-fraction must lie in (0, 1)"));
            }
            Ok(split_chronological(ds, test_fraction))
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let full = InteractionDataset::load_snapshot(&args.dataset)?;
    let train_data = match args.holdout {
        Holdout::None => full,
        _ => make_split(&full, args.holdout, args.test_fraction)?.train,
    };
    if train_data.nnz() == 0 {
        return Err(validation("training partition is empty"));
    }

    let mut manifest = RunManifest::new("train", &args.dataset, args.seed)?;
    manifest.param("learner", match args.learner {
        Learner::Eals => "eals",
        Learner::Als => "als",
        Learner::Bpr => "bpr",
    });
    manifest.param("factors", args.factors);
    manifest.param("reg", args.reg);
    manifest.param("c0", args.c0);
    manifest.param("alpha", args.alpha);
    manifest.param("iters", args.iters);
    manifest.param("tol", args.tol);
    manifest.param("threads", args.threads);
    manifest.param("holdout", match args.holdout {
        Holdout::None => "none",
        Holdout::Loo => "loo",
        Holdout::Chrono => "chrono",
    });
    manifest.param("test_fraction", args.test_fraction);

    let started = Instant::now();
    let (model, trace): (FactorModel, TrainTrace) = match args.learner {
        Learner::Eals => {
            let pop = item_popularity(&train_data)?;
            let weights = confidence_vector(&pop, args.c0, args.alpha)?;
            let cfg = TrainConfig {
                factors: args.factors,
                lambda: args.reg,
                max_iters: args.iters,
                rel_tol: args.tol,
                seed: args.seed,
                threads: args.threads,
                ..TrainConfig::default()
            };
            eals_train(&train_data, &weights, &cfg)?
        }
        Learner::Als => {
            let cfg = AlsConfig {
                factors: args.factors,
                lambda: args.reg,
                w0: args.c0 / train_data.num_items() as f64,
                max_iters: args.iters,
                rel_tol: args.tol,
                seed: args.seed,
                threads: args.threads,
                ..AlsConfig::default()
            };
            als_train(&train_data, &cfg)?
        }
        Learner::Bpr => {
            let cfg = BprConfig {
                factors: args.factors,
                lambda: args.reg,
                learning_rate: args.learning_rate,
                epochs: args.iters,
                seed: args.seed,
                ..BprConfig::default()
            };
            bpr_train(&train_data, &cfg)?
        }
    };

    model.save_snapshot(&args.model_out)?;
    write_trace(&trace, &with_suffix(&args.model_out, "trace.jsonl"))?;
    manifest.write(&with_suffix(&args.model_out, "manifest.json"))?;

    let last = trace.records.last();
    println!(
        "trained {} users x {} items, K={}, {} sweeps, final objective {:.6}, {:.2}s",
        model.num_users(),
        model.num_items(),
        args.factors,
        trace.records.len(),
        last.map_or(f64::NAN, |r| r.objective),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_eval_offline(
    model_path: &Path,
    dataset: &Path,
    cutoff: usize,
    exclude_train: bool,
    holdout: Holdout,
    test_fraction: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let full = InteractionDataset::load_snapshot(dataset)?;
    let split = make_split(&full, holdout, test_fraction)?;
    let model = FactorModel::load_snapshot(model_path)?;
    check_dims(&model, &split.train)?;
    let report = evaluate_offline(&model, &split, cutoff, exclude_train)?;
    if let Some(path) = out {
        write_events(&report, path)?;
    }
    println!(
        "events={} hr@{}={:.4} ndcg@{}={:.4}",
        report.events.len(),
        cutoff,
        report.mean_hr,
        cutoff,
        report.mean_ndcg
    );
    Ok(())
}

struct OnlineArgs {
    model: PathBuf,
    dataset: PathBuf,
    w_new: f64,
    online_iters: usize,
    cutoff: usize,
    test_fraction: f64,
    c0: f64,
    alpha: f64,
    reg: f64,
    seed: u64,
    out: Option<PathBuf>,
    breakdown_out: Option<PathBuf>,
}

fn cmd_eval_online(args: OnlineArgs) -> Result<(), CliError> {
    let full = InteractionDataset::load_snapshot(&args.dataset)?;
    let mut split = make_split(&full, Holdout::Chrono, args.test_fraction)?;
    let mut model = FactorModel::load_snapshot(&args.model)?;
    check_dims(&model, &split.train)?;
    let pop = item_popularity(&split.train)?;
    let mut weights = confidence_vector(&pop, args.c0, args.alpha)?;
    model.refresh_prediction_cache(&split.train);
    model.recompute_caches(&weights);
    let cfg = OnlineConfig {
        w_new: args.w_new,
        online_iters: args.online_iters,
        seed: args.seed,
        lambda: args.reg,
        ..OnlineConfig::default()
    };
    let report = evaluate_online(&mut model, &mut split, &mut weights, &cfg, args.cutoff)?;
    if let Some(path) = &args.out {
        write_events(&report, path)?;
    }
    if let Some(path) = &args.breakdown_out {
        let mut csv = String::from("history_len,events,hr,ndcg\n");
        for b in report.history_breakdown() {
            csv.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                b.history_len, b.events, b.mean_hr, b.mean_ndcg
            ));
        }
        std::fs::write(path, csv)?;
    }
    println!(
        "events={} hr@{}={:.4} ndcg@{}={:.4}",
        report.events.len(),
        args.cutoff,
        report.mean_hr,
        args.cutoff,
        report.mean_ndcg
    );
    Ok(())
}

fn cmd_bench(
    factors_list: &[usize],
    synthetic: &[usize],
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let [m, n, nnz] = synthetic else {
        return Err(validation("--synthetic takes exactly three values: users items interactions"));
    };
    let ds = power_law_dataset(*m, *n, *nnz, seed);
    let pop = item_popularity(&ds)?;
    let mut table = String::from("learner,factors,seconds\n");
    for &k in factors_list {
        let weights = confidence_vector(&pop, 64.0, 0.5)?;
        let mut model = FactorModel::init(ds.num_users(), ds.num_items(), k, seed, 0.01);
        model.refresh_prediction_cache(&ds);
        model.recompute_caches(&weights);

        let mut eals_model = model.clone();
        let t = Instant::now();
        sweep(&mut eals_model, &ds, &weights, 0.01, 1);
        table.push_str(&format!("eals,{},{:.6}\n", k, t.elapsed().as_secs_f64()));

        let w0 = 64.0 / ds.num_items() as f64;
        let t = Instant::now();
        als_sweep(&mut model, &ds, w0, 0.01, 1)?;
        table.push_str(&format!("als,{},{:.6}\n", k, t.elapsed().as_secs_f64()));
    }
    match out {
        Some(path) => std::fs::write(path, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_confidence(dataset: &Path, c0: f64, alpha: f64) -> Result<(), CliError> {
    let ds = InteractionDataset::load_snapshot(dataset)?;
    let pop = item_popularity(&ds)?;
    let weights = confidence_vector(&pop, c0, alpha)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for i in 0..ds.num_items() {
        writeln!(out, "{}\t{}", ds.item_key(i), weights.c[i])?;
    }
    Ok(())
}

fn check_dims(model: &FactorModel, train: &InteractionDataset) -> Result<(), CliError> {
    if model.num_users() != train.num_users() || model.num_items() != train.num_items() {
        return Err(validation(format!(
            "model is {}x{} but the training partition is {}x{}; \
             retrain with the matching --holdout settings",
            model.num_users(),
            model.num_items(),
            train.num_users(),
            train.num_items()
        )));
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn write_trace(trace: &TrainTrace, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    for rec in &trace.records {
        out.push_str(&serde_json::to_string(rec).expect("serializable record"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_events(report: &EvalReport, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    for ev in &report.events {
        out.push_str(&serde_json::to_string(ev).expect("serializable event"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
