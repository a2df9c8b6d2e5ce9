use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use genint::cli::config::ExperimentConfig;
use genint::cli::pipeline::{parse_stages, Pipeline, Stage};
use genint::Error;

#[derive(Parser)]
#[command(name = "genint", version, about = "Generative interventions on colored MNIST")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,

    /// INI experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `[run] out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Re-run stages even when their stamps are current.
    #[arg(long, global = true)]
    force: bool,

    /// Progress on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Verb {
    SynthData,
    TrainCvae,
    FitPca,
    GenerateInt,
    TransferInt,
    TrainClassifier,
    Eval,
    CausalBound,
    CorrAnalysis,
    ScmVerify,
    Ablate,
    /// Every stage in order, or the comma-separated `--stages` list.
    Run {
        #[arg(long, default_value = "run")]
        stages: String,
    },
    /// Print the resolved configuration as JSON.
    ShowConfig,
}

fn stages_for(verb: &Verb) -> genint::Result<Vec<Stage>> {
    let one = |s: Stage| Ok(vec![s]);
    match verb {
        Verb::SynthData => one(Stage::SynthData),
        Verb::TrainCvae => one(Stage::TrainCvae),
        Verb::FitPca => one(Stage::FitPca),
        Verb::GenerateInt => one(Stage::GenerateInt),
        Verb::TransferInt => one(Stage::TransferInt),
        Verb::TrainClassifier => one(Stage::TrainClassifier),
        Verb::Eval => one(Stage::Eval),
        Verb::CausalBound => one(Stage::CausalBound),
        Verb::CorrAnalysis => one(Stage::CorrAnalysis),
        Verb::ScmVerify => one(Stage::ScmVerify),
        Verb::Ablate => one(Stage::Ablate),
        Verb::Run { stages } => parse_stages(stages),
        Verb::ShowConfig => Ok(vec![]),
    }
}

fn real_main(cli: Cli) -> genint::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::defaults(&std::env::current_dir().map_err(|e| Error::Io {
            path: PathBuf::from("."),
            source: e,
        })?)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    if let Verb::ShowConfig = cli.verb {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let stages = stages_for(&cli.verb)?;
    let mut p = Pipeline::new(cfg);
    p.force = cli.force;
    p.verbose = cli.verbose;
    let summary = p.run(&stages)?;
    for s in &summary.executed {
        println!("{s}: ran");
    }
    for s in &summary.skipped {
        println!("{s}: up to date");
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
