use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vod_cac::config::{load_config, preset_config, ConfigError, Overrides, ScenarioConfig};
use vod_cac::experiment::{
    compare_analytic, run_experiment, write_experiment, ExperimentError, ExperimentResult,
    OutputFormat,
};
use vod_cac::metrics::MetricsError;

#[derive(Parser)]
#[command(
    name = "vod-cac",
    version,
    about = "Admission control experiments for a partitioned video server"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file and write result files.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run one of the shipped figure presets (fig2 ... fig7).
    Preset {
        name: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Simulate the config's base scenario once and compare with the
    /// analytic blocking values.
    Compare {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Check a config file and print a summary.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct RunOpts {
    /// Base seed; replication r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per sweep point.
    #[arg(long)]
    replications: Option<usize>,
    /// Output directory (default: the config's output_dir, else results/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Leading fraction of the horizon discarded as warm-up.
    #[arg(long)]
    warmup_fraction: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

impl RunOpts {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            replications: self.replications,
            warmup_fraction: self.warmup_fraction,
        }
    }

    fn out_dir(&self, config: &ScenarioConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| Path::new("results").join(&config.name))
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, opts } => {
            let mut cfg = load_config(&config)?;
            cfg.apply_overrides(&opts.overrides())?;
            execute(&cfg, &opts)
        }
        Command::Preset { name, opts } => {
            let mut cfg = preset_config(&name)?;
            cfg.apply_overrides(&opts.overrides())?;
            execute(&cfg, &opts)
        }
        Command::Compare { config, opts } => {
            let mut cfg = load_config(&config)?;
            cfg.apply_overrides(&opts.overrides())?;
            let scenario = cfg.build_scenario(None)?;
            let cmp = compare_analytic(&scenario).map_err(|e| Failure::Runtime(e.to_string()))?;
            print!("{}", cmp.render());
            if let Some(dir) = &opts.out {
                std::fs::create_dir_all(dir).map_err(|e| {
                    Failure::Runtime(format!("cannot write {}: {e}", dir.display()))
                })?;
                let path = dir.join(match opts.format {
                    Format::Csv => "comparison.csv",
                    Format::Json => "comparison.json",
                });
                let file = File::create(&path).map(BufWriter::new).map_err(|e| {
                    Failure::Runtime(format!("cannot write {}: {e}", path.display()))
                })?;
                let written = match opts.format {
                    Format::Csv => cmp.write_csv(file),
                    Format::Json => {
                        serde_json::to_writer_pretty(file, &cmp).map_err(MetricsError::from)
                    }
                };
                written.map_err(|e| Failure::Runtime(e.to_string()))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            summarize(&cfg)?;
            println!("ok");
            Ok(())
        }
    }
}

fn execute(cfg: &ScenarioConfig, opts: &RunOpts) -> Result<(), Failure> {
    let out = opts.out_dir(cfg);
    let result = run_experiment(cfg)?;
    let written = write_experiment(&result, &out, opts.format.into())?;
    print_plot(&result);
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

fn print_plot(result: &ExperimentResult) {
    for label in result.config.series_labels() {
        println!("series {label}");
        println!("{:>12} {:>14} {:>14} {:>14}", "x", "y", "ci_low", "ci_high");
        for p in result.series(&label) {
            match p.y {
                Some(y) => println!(
                    "{:>12} {:>14.6} {:>14.6} {:>14.6}",
                    p.x, y.estimate, y.ci_low, y.ci_high
                ),
                None => println!("{:>12} {:>14}", p.x, "-"),
            }
        }
    }
}

fn summarize(cfg: &ScenarioConfig) -> Result<(), ConfigError> {
    println!("name: {}", cfg.name);
    for (i, label) in cfg.series_labels().iter().enumerate() {
        let scenario = cfg.build_scenario((!cfg.series.is_empty()).then_some(i))?;
        println!(
            "series {label}: {} partitions, {} ports, horizon {} s, cascade {:?}",
            scenario.plan.partition_count(),
            scenario.plan.total_capacity(),
            scenario.horizon,
            scenario.cascade
        );
    }
    if let Some(sweep) = &cfg.sweep {
        println!(
            "sweep {:?}: {} points from {} to {} {}",
            sweep.parameter,
            sweep.values().len(),
            sweep.start,
            sweep.stop,
            sweep.parameter.units()
        );
    }
    println!("metric {:?}, {} replications", cfg.metric, cfg.replications);
    Ok(())
}
