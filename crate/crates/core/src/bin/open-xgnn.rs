use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use open_xgnn::config::RunConfig;
use open_xgnn::graph::SplitTag;
use open_xgnn::metrics::MetricsReport;
use open_xgnn::{pipeline, Error, Result};

#[derive(Parser)]
#[command(name = "open-xgnn", version, about = "Environment-aware explanations for graph classifiers")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    IdTest,
    Val,
    Test,
}

impl From<Split> for SplitTag {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitTag::Train,
            Split::IdTest => SplitTag::IdTest,
            Split::Val => SplitTag::Val,
            Split::Test => SplitTag::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate and split the synthetic dataset.
    Gen,
    /// Train the target classifier on the train split.
    TrainGnn,
    /// Fit the environment model on the train split.
    FitNpaf,
    /// Train the explanation generator.
    TrainExplainer,
    /// Explain one graph, writing DOT and JSON masks.
    Explain {
        #[arg(long)]
        graph: usize,
    },
    /// Score the explainer and both baselines.
    Evaluate {
        #[arg(long, value_enum)]
        split: Option<Split>,
    },
    /// Retrain with one module disabled per run.
    Ablate {
        #[arg(long, value_enum)]
        split: Option<Split>,
    },
    /// Sweep density and the LAR and reconstruction weights.
    Sweep,
    /// Time subgraph reconstruction across graph sizes.
    Bench,
}

fn print_reports(reports: &[MetricsReport]) {
    println!("method,fid_plus,fid_minus,gef,rho_e,gt_recall");
    for r in reports {
        println!("{},{:.4},{:.4},{:.4},{:.4},{:.4}", r.method, r.fid_plus, r.fid_minus, r.gef, r.rho_e, r.gt_recall);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    let dir: &Path = &cli.run_dir;
    match cli.command {
        Command::Gen => {
            let ds = pipeline::gen(&cfg, dir)?;
            println!("wrote {} graphs to {}", ds.len(), dir.join(pipeline::DATASET).display());
        }
        Command::TrainGnn => {
            let m = pipeline::train_gnn(&cfg, dir)?;
            println!("model {}", m.fingerprint());
        }
        Command::FitNpaf => {
            let env = pipeline::fit_env(&cfg, dir)?;
            println!("environment dims {:?}", env.dim_env);
        }
        Command::TrainExplainer => {
            pipeline::train_gvag(&cfg, dir)?;
            println!("wrote {}", dir.join(pipeline::EXPLAINER_DIR).display());
        }
        Command::Explain { graph } => println!("wrote {}", pipeline::explain(dir, graph)?.display()),
        Command::Evaluate { split } => print_reports(&pipeline::evaluate(&cfg, dir, split.map(Into::into))?),
        Command::Ablate { split } => print_reports(&pipeline::ablate(&cfg, dir, split.map(Into::into))?),
        Command::Sweep => print_reports(&pipeline::sweep(&cfg, dir)?),
        Command::Bench => println!("wrote {}", pipeline::bench(&cfg, dir)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Missing(_) => 2,
                Error::Config { .. } => 3,
                _ => 1,
            })
        }
    }
}
