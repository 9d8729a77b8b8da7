use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use botda_core::cli::{
    cmd_bench, cmd_dpp, cmd_eval, cmd_gen_dataset, cmd_grad_check, cmd_hotspot_fixture, cmd_infer,
    cmd_lcf, cmd_simulate, cmd_train, HotspotFixtureConfig, Scale, SimulateConfig, TrainConfig,
};
use botda_core::dataset::DatasetConfig;
use botda_core::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "botda",
    about = "Long-pulse BOTDA simulation, CNN-based BFS retrieval, and classical baselines"
)]
struct Cli {
    /// Global seed for stochastic steps.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Pin all thread pools to one thread.
    #[arg(long, global = true, default_value_t = false)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Brillouin gain frame from a fiber description.
    Simulate {
        /// JSON simulation config.
        #[arg(long)]
        config: PathBuf,
        /// Also write per-position spectra as CSV.
        #[arg(long, default_value_t = false)]
        csv: bool,
    },
    /// Generate a training dataset directory.
    GenDataset {
        /// JSON dataset config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sample count when no config file is given.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Train the retrieval network on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        /// JSON train config overriding the scale defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a checkpointed model over a stored frame.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frame: PathBuf,
    },
    /// Column-wise Lorentzian curve fitting of a stored frame.
    Lcf {
        #[arg(long)]
        frame: PathBuf,
    },
    /// Differential pulse-width pair reconstruction from two frames.
    Dpp {
        #[arg(long)]
        long: PathBuf,
        #[arg(long)]
        short: PathBuf,
    },
    /// Build the synthetic hotspot experiment replica.
    HotspotFixture {
        /// JSON fixture config; defaults replicate the 3.3/1/0.5 m
        /// hotspot layout.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare prediction traces against truth.
    Eval {
        /// One or more prediction trace CSVs (repeats enable the
        /// uncertainty report).
        #[arg(long, required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        /// SR-limited reference trace (smoothed truth).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// fixture.json with hotspot geometry.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Columns excluded at each trace end.
        #[arg(long, default_value_t = 20)]
        mask_margin: usize,
    },
    /// Time network inference against per-column fitting.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        frames: usize,
    },
    /// Finite-difference verification of every layer's gradients.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum ScaleArg {
    Desk,
    Full,
}

impl From<ScaleArg> for Scale {
    fn from(value: ScaleArg) -> Self {
        match value {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Full => Scale::Full,
        }
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    if cli.deterministic {
        // ignore failure when a pool already exists (e.g. in tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match cli.command {
        Command::Simulate { config, csv } => {
            let config: SimulateConfig = load_json(&config)?;
            let path = cmd_simulate(&config, cli.seed, &cli.out, csv)?;
            println!("wrote {}", path.display());
        }
        Command::GenDataset { config, samples } => {
            let config: DatasetConfig = match config {
                Some(path) => load_json(&path)?,
                None => DatasetConfig::standard(samples, cli.seed),
            };
            cmd_gen_dataset(&config, &cli.out)?;
            println!(
                "wrote {} samples + manifest.json under {}",
                config.n_samples,
                cli.out.display()
            );
        }
        Command::Train {
            data,
            scale,
            config,
        } => {
            let config: TrainConfig = match config {
                Some(path) => load_json(&path)?,
                None => match Scale::from(scale) {
                    Scale::Desk => TrainConfig::desk(cli.seed),
                    Scale::Full => TrainConfig {
                        scale: Scale::Full,
                        val_count: 200,
                        hyper: botda_core::srnet::TrainHyper {
                            seed: cli.seed,
                            ..Default::default()
                        },
                        init_seed: cli.seed ^ 0x5eed,
                    },
                },
            };
            let checkpoint = cmd_train(&config, &data, &cli.out)?;
            let best = checkpoint
                .history
                .iter()
                .map(|h| h.val_mse)
                .fold(f64::INFINITY, f64::min);
            println!(
                "trained {} epochs, best val MSE {best:.3e}, checkpoint under {}",
                checkpoint.history.len(),
                cli.out.display()
            );
        }
        Command::Infer { checkpoint, frame } => {
            let trace = cmd_infer(&checkpoint, &frame, &cli.out)?;
            println!("wrote cnn_trace.csv ({} positions)", trace.len());
        }
        Command::Lcf { frame } => {
            let (trace, report) = cmd_lcf(&frame, &cli.out)?;
            println!(
                "wrote lcf_trace.csv ({} positions, {} failed fits)",
                trace.len(),
                report.failed_columns.len()
            );
        }
        Command::Dpp { long, short } => {
            let (trace, report) = cmd_dpp(&long, &short, &cli.out)?;
            println!(
                "wrote dpp_trace.csv ({} positions, {} failed fits)",
                trace.len(),
                report.failed_columns.len()
            );
        }
        Command::HotspotFixture { config } => {
            let config: HotspotFixtureConfig = match config {
                Some(path) => load_json(&path)?,
                None => HotspotFixtureConfig::default(),
            };
            let meta = cmd_hotspot_fixture(&config, cli.seed, &cli.out)?;
            println!(
                "wrote fixture ({} pulse widths) under {}, digest {}",
                meta.config.pulse_widths_ns.len(),
                cli.out.display(),
                &meta.config_digest[..12]
            );
        }
        Command::Eval {
            pred,
            truth,
            reference,
            fixture,
            mask_margin,
        } => {
            let report = cmd_eval(
                &pred,
                &truth,
                reference.as_deref(),
                fixture.as_deref(),
                None,
                mask_margin,
                &cli.out,
            )?;
            println!(
                "RMSE {:.3} MHz over {} repeats; wrote metrics.json/csv",
                report.rmse_mhz, report.repeats
            );
            for h in &report.hotspots {
                println!(
                    "hotspot {:.1} m @ {:.1} m: raw err {:.2} MHz, SR-reference err {:.2} MHz",
                    h.length_m, h.center_m, h.raw_error_mhz, h.sr_reference_error_mhz
                );
            }
        }
        Command::Bench { checkpoint, frames } => {
            let report = cmd_bench(&checkpoint, frames, cli.seed, &cli.out)?;
            println!(
                "cnn {:.2} frames/s vs lcf {:.2} frames/s (speedup x{:.2})",
                report.cnn_frames_per_s, report.lcf_frames_per_s, report.cnn_speedup_over_lcf
            );
        }
        Command::GradCheck { seeds, tolerance } => {
            let reports = cmd_grad_check(seeds, tolerance, &cli.out)?;
            for r in &reports {
                println!(
                    "{}: max rel err {:.3e} over {} seeds -> {}",
                    r.layer,
                    r.max_rel_err,
                    r.seeds,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
