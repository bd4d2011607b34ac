use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dip_edl::config::RunConfig;
use dip_edl::pipeline::{self, CONFIG_FILE, TEST_ID_FILE, TEST_OOD_FILE};
use dip_edl::{verify, RandomSeed};

/// Evidential classifiers with density-informed pseudo-counts.
#[derive(Parser, Debug)]
#[command(name = "dip-edl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate data, train, and write checkpoints.
    Train(Common),
    /// Score an ID/OOD pair with trained checkpoints.
    Eval(EvalArgs),
    /// Train once and evaluate every DIP toggle combination.
    Ablate(AblateArgs),
    /// Run the numerical verification suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (defaults to the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Directory written by `train` (defaults to the output directory).
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// ID test CSV (defaults to the one saved next to the checkpoints).
    #[arg(long)]
    id: Option<PathBuf>,
    /// OOD test CSV (defaults to the one saved next to the checkpoints).
    #[arg(long)]
    ood: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// ID test CSV; generated from the config when omitted.
    #[arg(long, requires = "ood")]
    id: Option<PathBuf>,
    #[arg(long, requires = "id")]
    ood: Option<PathBuf>,
}

impl Common {
    fn load(&self, fallback_config: Option<&Path>) -> dip_edl::Result<RunConfig> {
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        let path = self.config.as_deref().or(fallback_config);
        RunConfig::load(path, &overrides)
    }

    fn out_dir(&self, config: &RunConfig) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&config.out))
    }
}

fn run(command: Command) -> dip_edl::Result<ExitCode> {
    match command {
        Command::Train(common) => {
            let config = common.load(None)?;
            let summary = pipeline::cmd_train(&config, &common.out_dir(&config))?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            match summary.final_loss {
                Some(loss) => println!("trained {:?} final loss {loss:.6}", config.mode),
                None => println!("trained {:?}", config.mode),
            }
            println!("wrote {}", summary.out_dir.display());
        }
        Command::Eval(args) => {
            // Without --config, reuse the config saved by `train`.
            let ckpt_hint = args.checkpoints.clone().or_else(|| args.common.out.clone());
            let saved = ckpt_hint
                .as_ref()
                .map(|d| d.join(CONFIG_FILE))
                .filter(|p| p.exists());
            let config = args.common.load(saved.as_deref())?;
            let out = args.common.out_dir(&config);
            let ckpt = args.checkpoints.clone().unwrap_or_else(|| out.clone());
            let id = args.id.clone().unwrap_or_else(|| ckpt.join(TEST_ID_FILE));
            let ood = args.ood.clone().unwrap_or_else(|| ckpt.join(TEST_OOD_FILE));
            let report = pipeline::cmd_eval(&config, &ckpt, &id, &ood, &out)?;
            println!(
                "{} accuracy={:.4} brier_id={:.4} brier_ood={:.4} auroc={:.4} aupr={:.4}",
                report.model,
                report.accuracy,
                report.brier_id,
                report.brier_ood,
                report.auroc,
                report.aupr
            );
        }
        Command::Ablate(args) => {
            let config = args.common.load(None)?;
            let out = args.common.out_dir(&config);
            let sets = args.id.as_deref().zip(args.ood.as_deref());
            for r in pipeline::cmd_ablate(&config, sets, &out)? {
                println!(
                    "{:<10} accuracy={:.4} brier_id={:.4} brier_ood={:.4} auroc={:.4} aupr={:.4}",
                    r.model, r.accuracy, r.brier_id, r.brier_ood, r.auroc, r.aupr
                );
            }
        }
        Command::Verify { seed } => {
            let results = verify::run_all(RandomSeed(seed))?;
            for r in &results {
                println!("{}", r.line());
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
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
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
