//! Command-line interface: sampling, likelihoods, shift reports, training,
//! evaluation, calibration, and the experiment runners.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, missing config file),
//! 2 runtime error.

use clap::{Args, Parser, Subcommand};
use reglang::harness::output::OutputFormat;
use reglang::harness::{runners, ExperimentConfig, RunCache};
use reglang::markov::{self, DatasetSlice, FamilyKind, LikelihoodMode};
use reglang::metrics;
use reglang::neural;
use reglang::{rng, shift};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "reglang",
    about = "Regular-language classification under distribution shift",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Config file (flat `key = value`); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Output format for result tables.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Worker threads for the parallel pool (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Sample labeled strings from a family slice or an eMC file.
    Sample {
        #[command(flatten)]
        common: CommonOpts,
        /// Language family (`parity` or `mod-k`); ignored with --emc.
        #[arg(long, default_value = "parity")]
        family: String,
        /// Dataset slice: train-id, test-id, or test-ood.
        #[arg(long, default_value = "train-id")]
        which: String,
        /// Delta of the o.o.d. chain (required for test-ood).
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 100)]
        n_pos: usize,
        #[arg(long, default_value_t = 100)]
        n_neg: usize,
        /// Sample from this eMC file instead of a built-in family.
        #[arg(long)]
        emc: Option<PathBuf>,
        /// Sample count when using --emc.
        #[arg(short = 'n', long, default_value_t = 100)]
        n: usize,
        /// Output dataset file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-probability of a string under an eMC file.
    Likelihood {
        /// eMC file.
        #[arg(long)]
        emc: PathBuf,
        /// The string (may be empty).
        #[arg(long)]
        input: String,
        /// `full` (normalized) or `paper` (bare emission product).
        #[arg(long, default_value = "full")]
        mode: String,
    },
    /// Shift-report rows (norms, bounds, TV estimates) for a family.
    Report {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value = "parity")]
        family: String,
        /// Single delta; the full grid when omitted.
        #[arg(long)]
        delta: Option<f64>,
        /// Monte-Carlo sample count.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train one classifier on a family and save a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value = "parity")]
        family: String,
        /// Auxiliary mode: none, ssas, count.
        #[arg(long, default_value = "none")]
        aux: String,
        /// Cell kind: lstm, gru, rnn.
        #[arg(long)]
        cell: Option<String>,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset file.
    Evaluate {
        /// Checkpoint path.
        #[arg(long)]
        model: PathBuf,
        /// Dataset file (tab-separated, as written by `sample`).
        #[arg(long)]
        data: PathBuf,
        /// Also write a psi,y CSV for `calibrate`.
        #[arg(long)]
        psi_out: Option<PathBuf>,
    },
    /// Calibration report (Brier + ECE) from a psi,y CSV.
    Calibrate {
        /// CSV with header `psi,y`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Bin by `psi` (default) or `max-confidence`.
        #[arg(long, default_value = "psi")]
        binning: String,
        /// Output JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment: shift-sweep, modulo-table, sample-size-sweep,
    /// cell-comparison, asymmetry, calibration.
    Experiment {
        name: String,
        #[command(flatten)]
        common: CommonOpts,
    },
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: std::error::Error + Send + Sync + 'static> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(anyhow::Error::new(e))
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            std::process::exit(1);
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}

fn load_config(common: &CommonOpts) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
            })?;
            ExperimentConfig::from_text(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.base_seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        config.out_dir = dir.clone();
    }
    Ok(config)
}

fn parse_family(s: &str) -> Result<FamilyKind, CliError> {
    if s == "parity" {
        return Ok(FamilyKind::Parity);
    }
    if let Some(k) = s.strip_prefix("mod-") {
        if let Ok(k) = k.parse::<usize>() {
            return Ok(FamilyKind::ModK(k));
        }
    }
    Err(CliError::Usage(format!("unknown family '{s}'")))
}

fn parse_format(s: &str) -> Result<OutputFormat, CliError> {
    match s {
        "csv" => Ok(OutputFormat::Csv),
        "json" => Ok(OutputFormat::Json),
        other => Err(CliError::Usage(format!("unknown format '{other}'"))),
    }
}

#[cfg(feature = "parallel")]
fn configure_pool(jobs: usize) {
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_pool(_jobs: usize) {}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sample {
            common,
            family,
            which,
            delta,
            n_pos,
            n_neg,
            emc,
            n,
            out,
        } => {
            configure_pool(common.jobs);
            let config = load_config(&common)?;
            let text = if let Some(emc_path) = emc {
                let chain = markov::load_emc(&emc_path)?;
                let examples = (0..n)
                    .map(|i| chain.sample(&mut rng::substream(config.base_seed, i as u64)))
                    .collect::<Result<Vec<_>, _>>()?;
                markov::dataset_to_text(&examples)
            } else {
                let kind = parse_family(&family)?;
                let shift_family = match kind {
                    FamilyKind::Parity => markov::parity_shift_family(&config.delta_grid)?,
                    FamilyKind::ModK(k) => markov::modk_shift_family(k, &config.delta_grid)?,
                };
                let slice = match which.as_str() {
                    "train-id" => DatasetSlice::TrainId,
                    "test-id" => DatasetSlice::TestId,
                    "test-ood" => DatasetSlice::TestOod(delta.ok_or_else(|| {
                        CliError::Usage("test-ood requires --delta".to_string())
                    })?),
                    other => {
                        return Err(CliError::Usage(format!("unknown slice '{other}'")));
                    }
                };
                let examples =
                    markov::sample_dataset(&shift_family, slice, n_pos, n_neg, config.base_seed)?;
                markov::dataset_to_text(&examples)
            };
            match out {
                Some(path) => std::fs::write(path, text).map_err(anyhow::Error::new).map_err(CliError::Runtime)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Likelihood { emc, input, mode } => {
            let chain = markov::load_emc(&emc)?;
            let mode = match mode.as_str() {
                "full" => LikelihoodMode::Full,
                "paper" => LikelihoodMode::Paper,
                other => return Err(CliError::Usage(format!("unknown mode '{other}'"))),
            };
            println!("{}", chain.string_likelihood(&input, mode)?);
            Ok(())
        }
        Command::Report {
            common,
            family,
            delta,
            n,
        } => {
            configure_pool(common.jobs);
            let mut config = load_config(&common)?;
            config.language = parse_family(&family)?;
            if let Some(n) = n {
                config.estimator_samples = n;
            }
            let deltas: Vec<f64> = match delta {
                Some(d) => vec![d],
                None => config.delta_grid.clone(),
            };
            let format = parse_format(&common.format)?;
            let out_dir = config.out_dir.clone();
            let reports = runners::run_report(&config, &deltas, Some(&out_dir), format)?;
            println!("{}", shift::ShiftReport::CSV_HEADER);
            for r in &reports {
                println!("{}", r.csv_row());
            }
            Ok(())
        }
        Command::Train {
            common,
            family,
            aux,
            cell,
            out,
        } => {
            configure_pool(common.jobs);
            let mut config = load_config(&common)?;
            config.language = parse_family(&family)?;
            if let Some(cell) = cell {
                config.cell = neural::CellKind::parse(&cell)
                    .ok_or_else(|| CliError::Usage(format!("unknown cell '{cell}'")))?;
            }
            let aux = neural::AuxMode::parse(&aux)
                .ok_or_else(|| CliError::Usage(format!("unknown aux mode '{aux}'")))?;
            let shift_family = config.family()?;
            let seed = config.base_seed;
            let train_set = markov::sample_dataset(
                &shift_family,
                DatasetSlice::TrainId,
                config.n_train_pos,
                config.n_train_neg,
                rng::mix(seed, &[1]),
            )?;
            let dev_set = markov::sample_dataset(
                &shift_family,
                DatasetSlice::TrainId,
                config.n_dev_pos,
                config.n_dev_neg,
                rng::mix(seed, &[2]),
            )?;
            let model_config = neural::ModelConfig {
                cell: config.cell,
                vocab_size: shift_family.label_dfa().alphabet().len(),
                embed_dim: config.embed_dim,
                hidden_dim: config.hidden_dim,
                n_states: if aux == neural::AuxMode::Ssas {
                    shift_family.label_dfa().n_states()
                } else {
                    0
                },
                n_count_classes: if aux == neural::AuxMode::Count {
                    config.count_classes
                } else {
                    0
                },
                aux_mode: aux,
                loss_weights: (1.0, 1.0),
            };
            let model = neural::init_model(&model_config, rng::mix(seed, &[5]))?;
            let (model, report) =
                neural::train(model, &train_set, &dev_set, &config.schedule(), rng::mix(seed, &[6]))?;
            neural::save_checkpoint(&model, &out)?;
            for e in 0..report.stopped_epoch {
                eprintln!(
                    "epoch {:>3}: loss {:.4} train_acc {:.4} dev_acc {:.4}",
                    e + 1,
                    report.epoch_loss[e],
                    report.epoch_train_acc[e],
                    report.epoch_dev_acc[e]
                );
            }
            eprintln!(
                "trained {} epochs; final dev accuracy {:.4}; checkpoint -> {}",
                report.stopped_epoch,
                report.epoch_dev_acc.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            model,
            data,
            psi_out,
        } => {
            let model = neural::load_checkpoint(&model)?;
            let text = std::fs::read_to_string(&data)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", data.display())))?;
            let examples = markov::dataset_from_text(&text)?;
            let eval = neural::evaluate(&model, &examples)?;
            println!("accuracy {}", eval.accuracy);
            if let Some(path) = psi_out {
                let mut csv = String::from("psi,y\n");
                for (p, ex) in eval.psi.iter().zip(&examples) {
                    csv.push_str(&format!("{},{}\n", p, u8::from(ex.y)));
                }
                std::fs::write(path, csv).map_err(anyhow::Error::new).map_err(CliError::Runtime)?;
            }
            Ok(())
        }
        Command::Calibrate {
            input,
            bins,
            binning,
            out,
        } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", input.display())))?;
            let mut psi = Vec::new();
            let mut y = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if i == 0 && line.trim() == "psi,y" {
                    continue;
                }
                let (p, label) = line
                    .split_once(',')
                    .ok_or_else(|| CliError::Usage(format!("line {}: expected psi,y", i + 1)))?;
                psi.push(
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Usage(format!("line {}: bad psi", i + 1)))?,
                );
                y.push(match label.trim() {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(CliError::Usage(format!("line {}: bad label '{other}'", i + 1)))
                    }
                });
            }
            let mode = match binning.as_str() {
                "psi" => metrics::BinningMode::Psi,
                "max-confidence" => metrics::BinningMode::MaxConfidence,
                other => return Err(CliError::Usage(format!("unknown binning '{other}'"))),
            };
            let report = metrics::ece_binned(&psi, &y, bins, mode)?;
            let json = serde_json::to_string_pretty(&report).map_err(anyhow::Error::new).map_err(CliError::Runtime)?;
            match out {
                Some(path) => std::fs::write(path, json + "\n").map_err(anyhow::Error::new).map_err(CliError::Runtime)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Experiment { name, common } => {
            configure_pool(common.jobs);
            let config = load_config(&common)?;
            let format = parse_format(&common.format)?;
            let out_dir = config.out_dir.clone();
            let dir: &Path = &out_dir;
            let cache = RunCache::new(config.base_seed);
            match name.as_str() {
                "shift-sweep" => {
                    runners::run_shift_sweep(&config, &cache, Some(dir), format)?;
                }
                "modulo-table" => {
                    runners::run_modulo_table(&config, &cache, Some(dir), format)?;
                }
                "sample-size-sweep" => {
                    runners::run_sample_size_sweep(&config, &cache, Some(dir), format)?;
                }
                "cell-comparison" => {
                    runners::run_cell_comparison(&config, &cache, Some(dir), format)?;
                }
                "asymmetry" => {
                    runners::run_asymmetry(&config, Some(dir), format)?;
                }
                "calibration" => {
                    runners::run_calibration(&config, &cache, Some(dir), format)?;
                }
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown experiment '{other}' (expected shift-sweep, modulo-table, \
sample-size-sweep, cell-comparison, asymmetry, calibration)"
                    )));
                }
            }
            eprintln!("results written to {}", dir.display());
            Ok(())
        }
    }
}
