//! Subcommand wiring.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smash_core::arch::{
    sample_architecture, to_graphviz, ArchitectureSpec, CorruptMode, SearchSpaceConfig,
};
use smash_core::data::Dataset;
use smash_core::dynnet::grad_wrt_encoding;
use smash_core::search::{
    correlation_study, corruption_probe, mcmc_refine, rank_candidates, retrain, SearchReport,
    SmashModel, TrainState,
};
use smash_core::tensor::Tensor;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};
use crate::report;
use crate::telemetry::StderrTelemetry;

#[derive(Parser)]
#[command(
    name = "smash",
    version,
    about = "One-shot architecture search over memory-bank networks with generated weights"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON run configuration (defaults to the built-in reference config).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory of IDX files (train-images-idx3-ubyte etc.); overrides
    /// the config's dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Report format for tabular outputs.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train the weight generator and shared parameters over random
    /// architectures.
    Train {
        #[command(flatten)]
        common: Common,
        /// Target epoch count (clamped to the schedule length).
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample and score fresh candidates under generated weights.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        candidates: Option<usize>,
    },
    /// Rank candidates, then refine the best by accept-if-better
    /// perturbations.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        candidates: Option<usize>,
    },
    /// Train a fixed architecture normally (free weights, batch norm).
    Retrain {
        #[command(flatten)]
        common: Common,
        /// Architecture JSON written by `search` or `export`.
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score many candidates, retrain a subset, and correlate the two
    /// error columns.
    Correlate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        candidates: Option<usize>,
        /// Retrain every K-th candidate of the sorted ranking.
        #[arg(long)]
        keep_every: Option<usize>,
    },
    /// Diagnostics on a trained checkpoint.
    Probe {
        #[command(subcommand)]
        probe: ProbeCommand,
    },
    /// Write an architecture's dataflow as Graphviz dot text.
    ExportDot {
        /// Architecture JSON.
        #[arg(long)]
        arch: PathBuf,
        /// Output .dot path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a report JSON on stdout.
    Report {
        /// Report path (JSON).
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum ProbeCommand {
    /// Score architectures against weights generated from corrupted
    /// encodings.
    Corrupt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of probe architectures.
        #[arg(long)]
        archs: Option<usize>,
    },
    /// Loss gradient with respect to the encoding tensor.
    Gradc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Independent deterministic stream per pipeline phase.
pub fn phase_rng(seed: u64, phase: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase);
    rng
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn load_checkpoint_and_config(
    ckpt: &Path,
    common: &Common,
) -> Result<(TrainState<f32>, RunConfig, Dataset)> {
    let (state, embedded) = checkpoint::load(ckpt)?;
    let mut run = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => embedded,
    };
    if let Some(seed) = common.seed {
        run.seed = seed;
    }
    let data = run.load_dataset(common.data.as_deref())?;
    Ok((state, run, data))
}

fn read_arch(path: &Path) -> Result<ArchitectureSpec> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let arch: ArchitectureSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    smash_core::arch::expect_valid(&arch)?;
    Ok(arch)
}

/// Sample probe architectures whose ops carry at least two distinct
/// dilation values, so dilation shuffling has a degree of freedom.
pub fn sample_probe_archs(
    config: &SearchSpaceConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ArchitectureSpec>> {
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 200 * n {
            return Err(CliError::Other(format!(
                "could not find {n} architectures with distinct dilations"
            )));
        }
        let arch = sample_architecture(config, rng, None).map_err(CliError::from)?;
        let dils: Vec<usize> = arch.ops_in_order().map(|(_, _, o)| o.dilation).collect();
        if dils.len() >= 2 && dils.iter().any(|&d| d != dils[0]) {
            out.push(arch);
        }
    }
    Ok(out)
}

fn write_report(common: &Common, name: &str, rep: &SearchReport) -> Result<PathBuf> {
    ensure_out(&common.out)?;
    match common.format {
        Format::Csv => {
            let path = common.out.join(format!("{name}.csv"));
            report::write_records_csv(&path, &rep.records)?;
            Ok(path)
        }
        Format::Json => {
            let path = common.out.join(format!("{name}.json"));
            report::write_json(&path, rep)?;
            Ok(path)
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut telemetry = StderrTelemetry::from_env();
    match cli.command {
        Command::Train { common, epochs, resume } => {
            let (mut state, run) = match &resume {
                Some(ckpt) => {
                    let (state, mut run) = checkpoint::load(ckpt)?;
                    if let Some(seed) = common.seed {
                        run.seed = seed;
                    }
                    (state, run)
                }
                None => {
                    let run = load_config(&common)?;
                    let state =
                        TrainState::<f32>::new(&run.space, &run.hypernet, &run.train, run.seed)?;
                    (state, run)
                }
            };
            let data = run.load_dataset(common.data.as_deref())?;
            // The schedule length is fixed by the config; --epochs sets
            // where this invocation stops within it, so a partial run
            // followed by --resume reproduces an uninterrupted one.
            let target = epochs.unwrap_or(state.settings.epochs).min(state.settings.epochs);
            let remaining = target.saturating_sub(state.epochs_done);
            state.run_epochs(&data, remaining, &mut telemetry)?;
            ensure_out(&common.out)?;
            let ckpt_path = common.out.join("smash.ckpt");
            checkpoint::save(&ckpt_path, &state, &run)?;
            run.save(&common.out.join("config.json"))?;
            println!("checkpoint written to {}", ckpt_path.display());
            Ok(())
        }

        Command::Rank { common, checkpoint, candidates } => {
            let (state, run, data) = load_checkpoint_and_config(&checkpoint, &common)?;
            let n = candidates.unwrap_or(run.search.candidates);
            let mut rng = phase_rng(run.seed, 2);
            let records =
                rank_candidates(&state.model, &run.space, n, &data, &mut rng, &mut telemetry)?;
            let rep = SearchReport::from_records(run.seed, run.space.clone(), records);
            let path = write_report(&common, "rank", &rep)?;
            println!("ranked {} candidates -> {}", rep.records.len(), path.display());
            Ok(())
        }

        Command::Search { common, checkpoint, candidates } => {
            let (state, run, data) = load_checkpoint_and_config(&checkpoint, &common)?;
            let n = candidates.unwrap_or(run.search.candidates);
            let mut rng = phase_rng(run.seed, 3);
            let records =
                rank_candidates(&state.model, &run.space, n, &data, &mut rng, &mut telemetry)?;
            let best = records[0].clone();
            let outcome = mcmc_refine(
                &state.model,
                &best.arch,
                &data,
                run.search.warm_perturbations,
                run.search.chain_steps,
                run.search.perturb_rate,
                &mut rng,
                &mut telemetry,
            )?;
            ensure_out(&common.out)?;
            let arch_path = common.out.join("best_arch.json");
            report::write_json(&arch_path, &outcome.incumbent)?;
            let rep = SearchReport::from_records(run.seed, run.space.clone(), records);
            write_report(&common, "search_rank", &rep)?;
            report::write_json(
                &common.out.join("search.json"),
                &serde_json::json!({
                    "base_score": best.smash_error,
                    "refined_score": outcome.score,
                    "chain_trace": outcome.trace,
                }),
            )?;
            println!(
                "best score {:.4} -> refined {:.4}; architecture at {}",
                best.smash_error,
                outcome.score,
                arch_path.display()
            );
            Ok(())
        }

        Command::Retrain { common, arch, epochs } => {
            let mut run = load_config(&common)?;
            if let Some(e) = epochs {
                run.retrain.epochs = e;
            }
            let data = run.load_dataset(common.data.as_deref())?;
            let spec = read_arch(&arch)?;
            let outcome = retrain::<f32>(&spec, &data, &run.retrain, run.seed, &mut telemetry)?;
            ensure_out(&common.out)?;
            report::write_json(
                &common.out.join("retrain.json"),
                &serde_json::json!({ "test_error": outcome.error }),
            )?;
            println!("retrained error {:.4}", outcome.error);
            Ok(())
        }

        Command::Correlate { common, checkpoint, candidates, keep_every } => {
            let (state, run, data) = load_checkpoint_and_config(&checkpoint, &common)?;
            let n = candidates.unwrap_or(250);
            let keep = keep_every.unwrap_or(5);
            let mut rng = phase_rng(run.seed, 4);
            let rep = correlation_study(
                &state.model,
                &run.space,
                &data,
                n,
                keep,
                &run.retrain,
                &mut rng,
                &mut telemetry,
            )?;
            ensure_out(&common.out)?;
            report::write_json(&common.out.join("correlate.json"), &rep)?;
            report::write_records_csv(&common.out.join("correlate.csv"), &rep.records)?;
            print!("{}", report::summarize(&rep));
            Ok(())
        }

        Command::Probe { probe } => match probe {
            ProbeCommand::Corrupt { common, checkpoint, archs } => {
                let (state, run, data) = load_checkpoint_and_config(&checkpoint, &common)?;
                let n = archs.unwrap_or(20);
                let mut rng = phase_rng(run.seed, 5);
                let probe_archs = sample_probe_archs(&run.space, n, &mut rng)?;
                let modes = [
                    CorruptMode::ShuffleDilations,
                    CorruptMode::ShuffleReads,
                    CorruptMode::SwapLayers,
                ];
                let table =
                    corruption_probe(&state.model, &probe_archs, &modes, &data, &mut rng)?;
                ensure_out(&common.out)?;
                report::write_probe_csv(&common.out.join("probe_corrupt.csv"), &table)?;
                report::write_json(&common.out.join("probe_corrupt.json"), &table)?;
                match table.fraction_clean_better {
                    Some(f) => println!("clean encoding better in {:.1}% of corrupted runs", f * 100.0),
                    None => println!("no corruption had a degree of freedom"),
                }
                Ok(())
            }
            ProbeCommand::Gradc { common, checkpoint } => {
                let (state, run, data) = load_checkpoint_and_config(&checkpoint, &common)?;
                let mut rng = phase_rng(run.seed, 6);
                let arch = sample_architecture(&run.space, &mut rng, None).map_err(CliError::from)?;
                let batch: Vec<u32> = data.val.iter().take(64).copied().collect();
                if batch.is_empty() {
                    return Err(CliError::Other("validation split is empty".into()));
                }
                let (raw, labels) = data.gather(&batch);
                let x = Tensor::from_vec(
                    &[batch.len(), data.channels, data.height, data.width],
                    raw,
                );
                let model: &SmashModel<f32> = &state.model;
                let g = grad_wrt_encoding(&arch, &model.hyper, &model.shared, &x, &labels)?;
                let shape = g.shape().to_vec();
                let gd = g.to_vec();
                let (c_enc, h, l) = (shape[1], shape[2], shape[3]);
                ensure_out(&common.out)?;
                // Per-column gradient norms.
                let path = common.out.join("probe_gradc.csv");
                let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Other(e.to_string()))?;
                w.write_record(["column", "grad_l2"]).map_err(|e| CliError::Other(e.to_string()))?;
                for col in 0..l {
                    let mut acc = 0.0f64;
                    for ch in 0..c_enc {
                        for row in 0..h {
                            let v = gd[(ch * h + row) * l + col] as f64;
                            acc += v * v;
                        }
                    }
                    w.write_record([col.to_string(), acc.sqrt().to_string()])
                        .map_err(|e| CliError::Other(e.to_string()))?;
                }
                w.flush().map_err(io_err(&path))?;
                // Channel-group summary.
                let m = run.space.max_banks;
                let group_norm = |range: std::ops::Range<usize>| -> f64 {
                    let mut acc = 0.0f64;
                    for ch in range {
                        for row in 0..h {
                            for col in 0..l {
                                let v = gd[(ch * h + row) * l + col] as f64;
                                acc += v * v;
                            }
                        }
                    }
                    acc.sqrt()
                };
                report::write_json(
                    &common.out.join("probe_gradc.json"),
                    &serde_json::json!({
                        "encoding_shape": shape,
                        "read_channels_l2": group_norm(0..m),
                        "write_channels_l2": group_norm(m..2 * m),
                        "dilation_channels_l2": group_norm(2 * m..2 * m + run.space.max_dilation),
                    }),
                )?;
                println!("encoding gradient written to {}", path.display());
                Ok(())
            }
        },

        Command::ExportDot { arch, out } => {
            let spec = read_arch(&arch)?;
            let dot = to_graphviz(&spec);
            std::fs::write(&out, dot).map_err(io_err(&out))?;
            println!("dot written to {}", out.display());
            Ok(())
        }

        Command::Report { input } => {
            let rep = report::read_report_json(&input)?;
            print!("{}", report::summarize(&rep));
            Ok(())
        }
    }
}

// Keep the unused-variable lint honest: phase 1 is reserved for training,
// which derives its stream inside TrainState.
#[allow(dead_code)]
fn _phases() -> [u64; 5] {
    [2, 3, 4, 5, 6]
}
