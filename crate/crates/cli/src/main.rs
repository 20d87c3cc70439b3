use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pstn_cli::commands::{self, EvalOptions, SplitName};
use pstn_cli::{exit_code, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pstn", version, about = "Train and evaluate probabilistic spatial transformers")]
struct Cli {
    /// Log progress (per-epoch losses, sweep runs) to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config.json, train_log.csv and checkpoint.pstn to the output directory.
    Train(ConfigArgs),
    /// Evaluate a checkpoint; writes a metrics CSV with reliability bins and a summary row.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Test-time samples (pstn only; cnn and stn always use 1).
        #[arg(long)]
        samples: Option<usize>,
        /// Multiplier on the posterior standard deviation.
        #[arg(long)]
        sigma_scale: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a stored config field, e.g. `--set data_dir=/elsewhere`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Write N posterior-sampled warps of one input plus the sampled transformations.
    Augment {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One IDX image or a one-line delimited series.
        #[arg(long)]
        input: PathBuf,
        #[arg(short, long, default_value_t = 3)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        sigma_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Repeat training for each value of one config field and aggregate test metrics.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Config field to vary, e.g. `sigma_p` or `subset`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

/// Config file plus per-field overrides; flags take precedence over the file.
#[derive(Args)]
struct ConfigArgs {
    /// JSON object or key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, help_heading = "Config fields")]
    variant: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    family: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    dataset: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    data_dir: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    train_file: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    test_file: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    synth_train: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    synth_test: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    synth_warp_scale: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    subset: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    balanced: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    seed: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    sigma_p: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    sigma_da: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    sigma_noise: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    s_train: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    s_test: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    epochs: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    batch_size: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    lr_classifier: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    lr_localizer: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    weight_decay: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    kl_weight: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    cells: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    grid_nx: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    grid_ny: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    n_steps: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    val_fraction: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    normalize: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    bins: Option<String>,
    #[arg(long, help_heading = "Config fields")]
    output_dir: Option<String>,
}

fn split_pair(s: &str) -> Result<(String, String), CliError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got `{s}`")))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let flags = [
            ("variant", &self.variant),
            ("family", &self.family),
            ("dataset", &self.dataset),
            ("data_dir", &self.data_dir),
            ("train_file", &self.train_file),
            ("test_file", &self.test_file),
            ("synth_train", &self.synth_train),
            ("synth_test", &self.synth_test),
            ("synth_warp_scale", &self.synth_warp_scale),
            ("subset", &self.subset),
            ("balanced", &self.balanced),
            ("seed", &self.seed),
            ("sigma_p", &self.sigma_p),
            ("sigma_da", &self.sigma_da),
            ("sigma_noise", &self.sigma_noise),
            ("s_train", &self.s_train),
            ("s_test", &self.s_test),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr_classifier", &self.lr_classifier),
            ("lr_localizer", &self.lr_localizer),
            ("weight_decay", &self.weight_decay),
            ("kl_weight", &self.kl_weight),
            ("cells", &self.cells),
            ("grid_nx", &self.grid_nx),
            ("grid_ny", &self.grid_ny),
            ("n_steps", &self.n_steps),
            ("val_fraction", &self.val_fraction),
            ("normalize", &self.normalize),
            ("bins", &self.bins),
            ("output_dir", &self.output_dir),
        ];
        for pair in &self.overrides {
            let (k, v) = split_pair(pair)?;
            cfg.set(&k, &v)?;
        }
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = commands::cmd_train(&cfg)?;
            if let Some(last) = out.logs.last() {
                println!("epoch {} class_loss {:.4} kl {:.4}", last.epoch, last.class_loss, last.kl);
            }
            println!("checkpoint {}", out.checkpoint.display());
            println!("log {}", out.log.display());
        }
        Command::Eval {
            checkpoint,
            split,
            samples,
            sigma_scale,
            out,
            overrides,
        } => {
            let opts = EvalOptions {
                split: match split {
                    Split::Train => SplitName::Train,
                    Split::Val => SplitName::Val,
                    Split::Test => SplitName::Test,
                },
                samples,
                sigma_scale,
                out,
                overrides: overrides.iter().map(|s| split_pair(s)).collect::<Result<_, _>>()?,
            };
            let res = commands::cmd_eval(&checkpoint, &opts)?;
            let m = &res.metrics;
            println!(
                "n {} samples {} accuracy {:.4} nll {:.4} ece {:.4} mean_entropy {:.4}",
                m.n, res.samples, m.accuracy, m.nll, m.ece, m.mean_entropy
            );
            println!("metrics {}", res.path.display());
        }
        Command::Augment {
            checkpoint,
            input,
            n,
            out,
            sigma_scale,
            seed,
        } => {
            let res = commands::cmd_augment(&checkpoint, &input, n, &out, sigma_scale, seed)?;
            for f in &res.files {
                println!("{}", f.display());
            }
            println!("{}", res.theta_csv.display());
        }
        Command::Sweep {
            config,
            param,
            values,
            repeats,
        } => {
            let cfg = config.resolve()?;
            for row in commands::cmd_sweep(&cfg, &param, &values, repeats)? {
                let std = |s: Option<f64>| s.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{param}={} accuracy {:.4} ± {} nll {:.4} ± {} ece {:.4} ± {}",
                    row.value,
                    row.accuracy.0,
                    std(row.accuracy.1),
                    row.nll.0,
                    std(row.nll.1),
                    row.ece.0,
                    std(row.ece.1)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
