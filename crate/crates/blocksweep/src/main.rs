use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blocksweep::analysis::AnalysisOptions;
use blocksweep::backend::BackendKind;
use blocksweep::config::{parse_blocks_list, parse_matrices_list, PipelineConfig};
use blocksweep::error::Error;
use blocksweep::measure::AggregateStrategy;
use blocksweep::sweep::BlockConfig;
use blocksweep::{pipeline, sweep};

/// Benchmark harvested GPU kernels across thread-block sizes.
#[derive(Parser)]
#[command(name = "blocksweep", version, about)]
struct Cli {
    /// Config file of `key = value` lines (flags take precedence)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Corpus root directory holding repos/, units/ and the manifests
    #[arg(long, default_value = ".")]
    corpus: PathBuf,

    /// Execution backend
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,

    /// Seed for the simulated backend and sampling
    #[arg(long)]
    seed: Option<u64>,

    /// Per-execution timeout in seconds
    #[arg(long)]
    timeout: Option<f64>,

    /// Worker threads
    #[arg(long)]
    workers: Option<usize>,

    /// Compiler command template with {src} {out} {include_dir}
    #[arg(long)]
    compiler: Option<String>,

    /// Comma-separated matrix sizes, e.g. 240x240,496x496
    #[arg(long)]
    matrices: Option<String>,

    /// Comma-separated block shapes, e.g. 64x1x1,8x8x1
    #[arg(long)]
    blocks: Option<String>,

    /// Repeated executions per configuration
    #[arg(long)]
    repeats: Option<u32>,

    /// Aggregation strategy for repeats
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<AggregateStrategy>,

    /// Comma-separated device ids to bind workers to
    #[arg(long)]
    devices: Option<String>,

    /// Write a fixed epoch timestamp into rows (reproducible output)
    #[arg(long)]
    no_timestamps: bool,

    /// Maximum compile attempts in the fix loop
    #[arg(long)]
    max_fix_attempts: Option<u32>,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "real" => Ok(BackendKind::Real),
        "simulated" => Ok(BackendKind::Simulated),
        other => Err(format!("unknown backend `{other}` (expected real|simulated)")),
    }
}

fn parse_strategy(s: &str) -> Result<AggregateStrategy, String> {
    AggregateStrategy::parse(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Fetch repositories from a URL list into the corpus
    Mine {
        #[command(flatten)]
        common: CommonOpts,
        /// Text file with one repository URL per line
        #[arg(long)]
        repo_list: PathBuf,
    },
    /// Isolate global functions from mined repositories into units
    Extract {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Compile harnessed units, applying the fix-rule loop
    Build {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Benchmark built units over the (matrix x block) space
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evaluate aggregation strategies on a pool of runtimes
    AggregateEval {
        /// File with one runtime value per line
        input: PathBuf,
        /// Values sampled per repetition
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Repetitions
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Analyze a dataset CSV into report.json and block profiles
    Analyze {
        /// Dataset CSV path
        input: PathBuf,
        /// Output directory (defaults to the CSV's directory)
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Performance threshold for the below-threshold fraction
        #[arg(long, default_value_t = 0.85)]
        threshold: f64,
        /// Gain threshold for the above-threshold fraction
        #[arg(long, default_value_t = 0.20)]
        gain: f64,
        /// Default block to compare against, e.g. 1024,1,1
        #[arg(long, default_value = "1024x1x1")]
        default_block: String,
        /// Blocks a slice must cover to count as complete
        #[arg(long)]
        blocks: Option<String>,
    },
    /// Print dataset statistics and headline analysis numbers
    Report {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run extract -> build -> sweep -> analyze (and mine, when a repo
    /// list is configured)
    All {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        repo_list: Option<PathBuf>,
    },
}

fn build_config(
    common: &CommonOpts,
    config_file: Option<&PathBuf>,
    repo_list: Option<&PathBuf>,
) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = config_file {
        cfg.apply_file(path)?;
    }
    cfg.corpus_root = common.corpus.clone();
    if let Some(list) = repo_list {
        cfg.repo_list = Some(list.clone());
    }
    if let Some(backend) = common.backend {
        cfg.backend = backend;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(timeout) = common.timeout {
        if timeout <= 0.0 {
            return Err(Error::Config("timeout must be positive".into()));
        }
        cfg.timeout_s = timeout;
    }
    if let Some(workers) = common.workers {
        cfg.workers = workers.max(1);
    }
    if let Some(compiler) = &common.compiler {
        cfg.compiler_template = compiler.clone();
    }
    if let Some(matrices) = &common.matrices {
        cfg.matrices = parse_matrices_list(matrices)?;
    }
    if let Some(blocks) = &common.blocks {
        cfg.blocks = parse_blocks_list(blocks)?;
    }
    if let Some(repeats) = common.repeats {
        cfg.repeats = repeats.max(1);
    }
    if let Some(strategy) = common.strategy {
        cfg.strategy = strategy;
    }
    if let Some(devices) = &common.devices {
        cfg.device_ids = devices
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad device id `{s}`")))
            })
            .collect::<Result<_, _>>()?;
    }
    if common.no_timestamps {
        cfg.timestamps = false;
    }
    if let Some(max) = common.max_fix_attempts {
        cfg.max_fix_attempts = max.max(1);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Mine { common, repo_list } => {
            let cfg = build_config(&common, cli.config.as_ref(), Some(&repo_list))?;
            let (downloaded, missing, failed) = pipeline::stage_mine(&cfg)?;
            println!("mine: {downloaded} downloaded, {missing} missing, {failed} failed");
            Ok(())
        }
        Command::Extract { common } => {
            let cfg = build_config(&common, cli.config.as_ref(), None)?;
            let records = pipeline::stage_extract(&cfg.corpus_root)?;
            let isolated = records.iter().filter(|r| r.buildable()).count();
            println!(
                "extract: {} candidates, {} isolated, manifest at {}",
                records.len(),
                isolated,
                pipeline::extract_manifest_path(&cfg.corpus_root).display()
            );
            Ok(())
        }
        Command::Build { common } => {
            let cfg = build_config(&common, cli.config.as_ref(), None)?;
            let results = pipeline::stage_build(&cfg)?;
            let ok = results
                .iter()
                .filter(|r| matches!(r.status, blocksweep::BuildStatus::Ok))
                .count();
            let fixed = results
                .iter()
                .filter(|r| matches!(r.status, blocksweep::BuildStatus::FixedThenOk))
                .count();
            println!(
                "build: {} units, {ok} ok, {fixed} fixed_then_ok, {} failed",
                results.len(),
                results.len() - ok - fixed
            );
            Ok(())
        }
        Command::Sweep { common } => {
            let cfg = build_config(&common, cli.config.as_ref(), None)?;
            let (appended, total) = pipeline::stage_sweep(&cfg)?;
            println!(
                "sweep: appended {appended} rows, dataset now {total} rows at {}",
                pipeline::dataset_csv_path(&cfg.corpus_root).display()
            );
            Ok(())
        }
        Command::AggregateEval { input, k, reps, seed } => {
            let text = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            let pool: Vec<f64> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.trim()
                        .parse()
                        .map_err(|_| Error::Dataset(format!("bad pool value `{l}`")))
                })
                .collect::<Result<_, _>>()?;
            let report = blocksweep::evaluate_strategies(
                &pool,
                k,
                reps,
                seed,
                &AggregateStrategy::ALL,
            )?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            Ok(())
        }
        Command::Analyze {
            input,
            out_dir,
            threshold,
            gain,
            default_block,
            blocks,
        } => {
            let mut opts = AnalysisOptions {
                default_block: BlockConfig::parse(&default_block)?,
                perf_threshold: threshold,
                gain_threshold: gain,
                ..AnalysisOptions::default()
            };
            if let Some(blocks) = &blocks {
                opts.blocks = parse_blocks_list(blocks)?;
            }
            let out_dir = out_dir.unwrap_or_else(|| {
                input
                    .parent()
                    .map(|p| p.to_path_buf())
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let report = pipeline::stage_analyze(&input, &out_dir, &opts)?;
            println!(
                "analyze: {} slices ({} complete), report at {}",
                report.n_slices_total,
                report.n_slices_complete,
                out_dir.join("report.json").display()
            );
            Ok(())
        }
        Command::Report { common } => {
            let cfg = build_config(&common, cli.config.as_ref(), None)?;
            let csv = pipeline::dataset_csv_path(&cfg.corpus_root);
            let rows = sweep::load_dataset_csv(&csv)?;
            let stats = sweep::dataset_stats(&rows);
            println!("dataset: {}", csv.display());
            println!("  rows: {}", stats.rows);
            println!("  non-NaN fraction: {:.4}", stats.non_nan_fraction);
            println!("  distinct units: {}", stats.distinct_units);
            for (status, count) in &stats.status_counts {
                println!("  status {status}: {count}");
            }
            let report = blocksweep::analysis::analyze(&rows, &AnalysisOptions::default())?;
            println!("analysis over {} complete slices:", report.n_slices_complete);
            if let Some(frac) = report.frac_default_not_best {
                println!("  largest block not best in {:.1}% of slices", frac * 100.0);
            }
            if let Some(perf) = report.mean_perf_default {
                println!("  largest block mean performance: {:.1}%", perf * 100.0);
            }
            if let Some(gain) = report.mean_gain_optimal {
                println!("  mean gain from optimal block: {:.1}%", gain * 100.0);
            }
            println!(
                "  slices with gain > {:.0}%: {:.1}%",
                report.frac_gain_above.threshold * 100.0,
                report.frac_gain_above.fraction * 100.0
            );
            Ok(())
        }
        Command::All { common, repo_list } => {
            let cfg = build_config(&common, cli.config.as_ref(), repo_list.as_ref())?;
            if cfg.repo_list.is_some() {
                let (downloaded, missing, failed) = pipeline::stage_mine(&cfg)?;
                println!("mine: {downloaded} downloaded, {missing} missing, {failed} failed");
            }
            let records = pipeline::stage_extract(&cfg.corpus_root)?;
            println!(
                "extract: {} candidates, {} isolated",
                records.len(),
                records.iter().filter(|r| r.buildable()).count()
            );
            let results = pipeline::stage_build(&cfg)?;
            println!("build: {} units processed", results.len());
            let (appended, total) = pipeline::stage_sweep(&cfg)?;
            println!("sweep: appended {appended} rows ({total} total)");
            let opts = AnalysisOptions {
                blocks: cfg.blocks.clone(),
                ..AnalysisOptions::default()
            };
            let report = pipeline::stage_analyze(
                &pipeline::dataset_csv_path(&cfg.corpus_root),
                &cfg.corpus_root,
                &opts,
            )?;
            println!(
                "analyze: {} complete slices, report at {}",
                report.n_slices_complete,
                cfg.corpus_root.join("report.json").display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // clap exits with code 2 on usage errors, matching the config-error code
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(message)) => {
            eprintln!("configuration error: {message}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
