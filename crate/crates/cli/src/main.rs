use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "trustscore", version, about = "Test-time uncertainty scores for trained classifiers")]
struct Cli {
    /// JSON file with the command's parameters; omitted fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every seed the command uses.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Worker threads for per-sample work. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Method {
    Trust,
    McDropout,
    Msp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Trust => "trust",
            Method::McDropout => "mc_dropout",
            Method::Msp => "msp",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train/test/OOD datasets.
    Gen {
        /// Number of OOD samples.
        #[arg(long, default_value_t = 400)]
        ood_n: usize,
    },
    /// Train an MLP classifier.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score every sample of a dataset.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "trust")]
        method: Method,
        /// `key=v1,v2,...`: one scoring run per value of a config field.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Accuracy at top-k% confidence, risk-coverage and sparsification curves.
    Stratify {
        #[arg(long)]
        scores: PathBuf,
        /// Removal steps for the sparsification curve.
        #[arg(long, default_value_t = trustscore::metrics::DEFAULT_AUSE_STEPS)]
        steps: usize,
    },
    /// Monte Carlo checks of the hypersphere geometry results.
    VerifyTheory,
    /// Accuracy drop vs score MMD under corruption, and score histograms.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        ood: Option<PathBuf>,
        /// Precomputed TRUST score CSVs, reused instead of rescoring.
        #[arg(long)]
        train_scores: Option<PathBuf>,
        #[arg(long)]
        test_scores: Option<PathBuf>,
        #[arg(long)]
        ood_scores: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = commands::Context::new(cli.config, cli.seed, cli.out, cli.workers)?;
    ctx.install(|| match cli.command {
        Command::Gen { ood_n } => commands::gen(&ctx, ood_n),
        Command::Train { data } => commands::train(&ctx, &data),
        Command::Score {
            model,
            data,
            method,
            sweep,
        } => commands::score(&ctx, &model, &data, method, sweep.as_deref()),
        Command::Stratify { scores, steps } => commands::stratify(&ctx, &scores, steps),
        Command::VerifyTheory => commands::verify_theory(&ctx),
        Command::Report {
            model,
            train,
            test,
            ood,
            train_scores,
            test_scores,
            ood_scores,
        } => commands::report(
            &ctx,
            &commands::ReportInputs {
                model,
                train,
                test,
                ood,
                train_scores,
                test_scores,
                ood_scores,
            },
        ),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            CliError::new("usage", e.to_string().trim_end()).report();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::FAILURE
        }
    }
}
