use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use caesn::control::ControllerKind;
use caesn::exec::{self, Execution};
use caesn::harness::{self, Options, RunConfig};
use caesn::Error;

#[derive(Parser, Debug)]
#[command(name = "caesn", version, about = "Extreme-event control of a nine-mode shear flow")]
struct Cli {
    /// TOML run configuration. Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = one per core, 1 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Add wall-clock columns to the CSV outputs.
    #[arg(long, global = true)]
    timings: bool,

    /// More log output (repeat for debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate training and validation series.
    Generate,
    /// Fit the network on a dataset and report validation error.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Tune controller gains or network settings.
    Tune {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Run paired episodes for each strategy.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated strategies, e.g. NC,AC,P_ESN.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<ControllerKind>>,
        /// Overrides the configured episode count.
        #[arg(long)]
        episodes: Option<usize>,
        /// A `tuned.toml` whose sections replace those of the config.
        #[arg(long)]
        tuned: Option<PathBuf>,
        #[arg(long)]
        save_trajectories: bool,
    },
    /// Energy histogram of trajectory files.
    Pdf {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(cli: &Cli) -> caesn::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> caesn::Result<bool> {
    let mut cfg = load_config(cli)?;
    let opts = Options {
        out_dir: cfg.out_dir.clone(),
        exec: if cli.workers == 1 {
            Execution::Sequential
        } else {
            Execution::available()
        },
        timings: cli.timings,
    };
    match &cli.command {
        Command::Generate => {
            let out = harness::cmd_generate(&cfg, &opts)?;
            println!("config hash {}", out.manifest.config_hash);
        }
        Command::Train { dataset, validation } => {
            let out = harness::cmd_train(&cfg, &opts, dataset, validation.as_deref())?;
            print!("model {} residual {}", out.model_path.display(), out.relative_residual);
            match out.median_error() {
                Some(m) => println!(" median one-step error {m}"),
                None => println!(),
            }
        }
        Command::Tune {
            model,
            dataset,
            validation,
        } => {
            let out = harness::cmd_tune(&cfg, &opts, model.as_deref(), dataset.as_deref(), validation.as_deref())?;
            let best = &out.history[out.best];
            println!("best objective {} at {:?}", best.objective, best.point);
            print!("{}", out.tuned_toml);
        }
        Command::Evaluate {
            model,
            strategies,
            episodes,
            tuned,
            save_trajectories,
        } => {
            if let Some(path) = tuned {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                cfg = harness::merge_tuned(&cfg, &text)?;
            }
            if let Some(s) = strategies {
                cfg.evaluate.strategies = s.clone();
            }
            if let Some(n) = episodes {
                cfg.evaluate.n_episodes = *n;
            }
            let out = harness::cmd_evaluate(&cfg, &opts, model.as_deref(), *save_trajectories)?;
            println!("strategy  mean_R  P_e  P_c  failed ({})", cfg.evaluate.scale_label());
            for s in &out.summaries {
                match &s.summary {
                    Some(b) => println!(
                        "{:<8} {:.5} {:.5} {:.5} {}",
                        s.kind, b.mean_reward, b.p_event, b.p_control, s.n_failed
                    ),
                    None => println!("{:<8} - - - {}", s.kind, s.n_failed),
                }
            }
            if out.failure_exceeded {
                log::error!("too many failed episodes");
                return Ok(false);
            }
        }
        Command::Pdf { files } => {
            let h = harness::cmd_pdf(&cfg, &opts, files)?;
            println!("{} bins, {} samples outside range", h.counts.len(), h.n_outside);
        }
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match exec::with_workers(cli.workers, || run(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
