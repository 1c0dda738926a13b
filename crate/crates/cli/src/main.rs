use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use evoad_core::bench::{bench_scaling, BenchConfig};
use evoad_core::data::{load_csv, write_csv, MinMaxScaler};
use evoad_core::pipeline::{run_id, run_until};
use evoad_core::synth::{generate_synthetic, SynthSpec};
use evoad_core::{Error, Level, RunConfig, RunManifest};

const USAGE: u8 = 1;
const DATA: u8 = 2;
const INTERNAL: u8 = 3;

/// Multi-level neuroevolution of autoencoder ensembles for anomaly detection.
#[derive(Debug, Parser)]
#[command(name = "evoad", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the configured worker count.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic train/test pair with labelled anomalies.
    Synth(SynthArgs),
    /// Run the reduction level.
    Reduce,
    /// Run up to subspace evolution.
    Subspaces,
    /// Run up to model evolution.
    Models,
    /// Run up to fine-tuning.
    Finetune,
    /// Run up to ensemble assembly.
    Ensemble,
    /// Score a finished run on its test set.
    Evaluate,
    /// Run every level and evaluate.
    Pipeline,
    /// Time population evaluation at several worker counts.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    features: usize,
    #[arg(long, default_value_t = 20_000)]
    train_len: usize,
    #[arg(long, default_value_t = 5_000)]
    test_len: usize,
    #[arg(long, default_value_t = 0.10)]
    anomaly_rate: f64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Worker counts to time; the first must be 1.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    worker_counts: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    population: usize,
    /// Population per worker for scaleup runs.
    #[arg(long, default_value_t = 4)]
    scaleup_base: usize,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_data_error() => DATA,
        Error::Config(_) | Error::Argument(_) => USAGE,
        Error::Level { source, .. } | Error::Evolution { source, .. } => exit_code(source),
        _ => INTERNAL,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => return Err(Failure::Usage("this command needs --config PATH".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn print_manifest(m: &RunManifest) {
    println!("run {} in {}", m.run_id, m.run_dir.display());
    for l in &m.levels {
        let note = if l.resumed { " (resumed)" } else { "" };
        println!("  {:<10} {:>8.2}s{note}", l.level, l.wall_seconds);
    }
    for (name, report) in [("ensemble", &m.metrics), ("baseline", &m.baseline)] {
        if let Some(r) = report {
            println!(
                "  {name:<10} f1 {:.4}  precision {:.4}  recall {:.4}  (tp {} fp {} fn {} tn {})",
                r.f1, r.precision, r.recall, r.tp, r.fp, r.fn_, r.tn
            );
        }
    }
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        features: args.features,
        train_len: args.train_len,
        test_len: args.test_len,
        anomaly_rate: args.anomaly_rate,
        seed: cli.seed.unwrap_or(0),
        ..SynthSpec::default()
    };
    let d = generate_synthetic(&spec)?;
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    write_csv(&d.train, dir.join("train.csv"))?;
    write_csv(&d.test, dir.join("test.csv"))?;
    let path = dir.join("anomalies.json");
    let text = serde_json::to_string_pretty(&d.anomalies).map_err(Error::from)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let labelled = d
        .test
        .labels
        .as_ref()
        .map_or(0, |l| l.iter().filter(|&&x| x == 1).count());
    println!(
        "wrote {} ({} train, {} test rows, {} anomalous points in {} segments)",
        dir.display(),
        d.train.len(),
        d.test.len(),
        labelled,
        d.anomalies.len()
    );
    Ok(())
}

fn bench(cli: &Cli, args: &BenchArgs) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let raw = load_csv(&cfg.data.train, false)?;
    let rows = MinMaxScaler::fit(&raw.values).transform(&raw.values)?;
    let bench_cfg = BenchConfig {
        population: args.population,
        scaleup_base: args.scaleup_base,
        models: cfg.models.clone(),
        finetune: cfg.finetune.clone(),
        seed: cfg.seed,
    };
    let report = bench_scaling(&rows, &bench_cfg, &args.worker_counts)?;
    println!("host cores: {}", report.host_cores);
    println!("workers  model_s  speedup  scaleup  finetune_s  speedup  scaleup");
    for p in &report.points {
        println!(
            "{:>7} {:>8.3} {:>8.2} {:>8.2} {:>11.3} {:>8.2} {:>8.2}",
            p.workers,
            p.model_seconds,
            p.model_speedup,
            p.model_scaleup,
            p.finetune_seconds,
            p.finetune_speedup,
            p.finetune_scaleup
        );
    }
    println!("identical results across worker counts: {}", report.identical_results);
    let dir = cfg.out_dir;
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join("bench.json");
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let level = match cli.command {
        Command::Synth(ref args) => return synth(cli, args),
        Command::Bench(ref args) => return bench(cli, args),
        Command::Reduce => Level::Reduce,
        Command::Subspaces => Level::Subspaces,
        Command::Models => Level::Models,
        Command::Finetune => Level::FineTune,
        Command::Ensemble | Command::Evaluate | Command::Pipeline => Level::Ensemble,
    };
    let cfg = load_config(cli)?;
    let evaluate = matches!(cli.command, Command::Evaluate | Command::Pipeline);
    if matches!(cli.command, Command::Evaluate) {
        let done = cfg.out_dir.join(run_id(&cfg)?).join("ensemble.done");
        if !done.exists() {
            return Err(Failure::Usage(
                "no finished ensemble for this config; run `pipeline` or `ensemble` first".into(),
            ));
        }
        if cfg.data.test.as_os_str().is_empty() {
            return Err(Failure::Usage("evaluation needs data.test in the config".into()));
        }
    }
    let manifest = run_until(&cfg, level, evaluate)?;
    print_manifest(&manifest);
    if matches!(cli.command, Command::Evaluate) {
        let m = manifest
            .metrics
            .as_ref()
            .map(|r| json!({ "ensemble": r, "baseline": manifest.baseline }));
        println!("{}", serde_json::to_string_pretty(&m).map_err(Error::from)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
