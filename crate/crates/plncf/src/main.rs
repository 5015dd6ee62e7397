//! Experiment driver CLI: one config file drives dataset generation,
//! the full training matrix, evaluation, clustering, figures, and the
//! summary report, with a self-verification battery on the side.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use plncf::experiment::{
    load_experiment_config, run_cluster, run_evaluate, run_generate, run_report, run_train,
    run_visualize, ExperimentConfig, ExperimentContext, StageOutcome, OUTPUT_ENV,
};
use plncf::models::Arch;
use plncf::splits::Protocol;
use plncf::verify;

#[derive(Parser)]
#[command(
    name = "plncf",
    version,
    about = "Pseudo-label collaborative filtering: synthetic dataset, training matrix, ranking evaluation, embedding analysis",
    after_help = "Artifacts land under OUT/{stage}/{model}_{protocol}_{seed}/. The output root is, \
                  in order of precedence: --out, the PLNCF_OUT environment variable, then the \
                  config's output_dir."
)]
struct Cli {
    /// TOML experiment config; every field has a published default, so the
    /// flag can be omitted entirely.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output root, overriding both the config and PLNCF_OUT.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for independent runs (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic survey dataset (JSON bundle + CSV exports).
    Generate {
        /// Override the number of users. Also drops the canonical extra
        /// groups, so the group count becomes exactly users x reps.
        #[arg(long)]
        n: Option<usize>,
        /// Override memberships per user (same extra-group behavior).
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Train (model, protocol, seed) runs; completed runs are skipped.
    Train(MatrixArgs),
    /// Rank held-out positives and write per-run evaluation reports.
    Evaluate(MatrixArgs),
    /// Cluster embedding spaces over the k grid with silhouette scans.
    Cluster(MatrixArgs),
    /// Project embedding spaces to 2D and write overlay figures.
    Visualize(MatrixArgs),
    /// Aggregate the full matrix into tables, correlations, and figures.
    Report,
    /// Run the self-verification battery (oracles and identities).
    Verify,
}

/// Filters narrowing the run matrix; empty means every configured value.
#[derive(Args, Default)]
struct MatrixArgs {
    /// Comma-separated models (mf, mlp, neumf, mf_pl, mlp_pl, neumf_pl).
    #[arg(long, value_delimiter = ',', value_parser = parse_arch)]
    models: Vec<Arch>,

    /// Comma-separated protocols (loo, ratio).
    #[arg(long, value_delimiter = ',', value_parser = parse_protocol)]
    protocols: Vec<Protocol>,

    /// Comma-separated seeds.
    #[arg(long = "seed-list", visible_alias = "seeds", value_delimiter = ',')]
    seed_list: Vec<u64>,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    Arch::from_str(s).map_err(|e| e.to_string())
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    Protocol::from_str(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();

    if let Command::Verify = cli.command {
        return run_verify();
    }

    let mut config = match &cli.config {
        Some(path) => load_experiment_config(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Command::Generate { n, reps } = &cli.command {
        if n.is_some() || reps.is_some() {
            if let Some(n) = n {
                config.dataset.n = *n;
            }
            if let Some(reps) = reps {
                config.dataset.reps = *reps;
            }
            config.dataset.extra_groups = 0;
        }
    }

    let ctx = ExperimentContext::new(config, cli.out.clone(), cli.jobs)?;

    let outcome = match &cli.command {
        Command::Generate { .. } => run_generate(&ctx)?,
        Command::Train(args) => run_train(&ctx, &filter(&ctx, args))?,
        Command::Evaluate(args) => run_evaluate(&ctx, &filter(&ctx, args))?,
        Command::Cluster(args) => run_cluster(&ctx, &filter(&ctx, args))?,
        Command::Visualize(args) => run_visualize(&ctx, &filter(&ctx, args))?,
        Command::Report => run_report(&ctx)?,
        Command::Verify => unreachable!("handled above"),
    };
    print_outcome(&ctx, &outcome);
    Ok(ExitCode::SUCCESS)
}

fn filter(ctx: &ExperimentContext, args: &MatrixArgs) -> Vec<plncf::experiment::RunKey> {
    ctx.filtered_matrix(&args.models, &args.protocols, &args.seed_list)
}

fn print_outcome(ctx: &ExperimentContext, outcome: &StageOutcome) {
    println!(
        "{}: ran {}, skipped {}, wrote {} file(s) under {}",
        outcome.stage,
        outcome.ran,
        outcome.skipped,
        outcome.files.len(),
        ctx.out_root.display()
    );
}

fn run_verify() -> anyhow::Result<ExitCode> {
    let checks = verify::run_all();
    for check in &checks {
        println!("{}", check.line());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", checks.len());
        return Ok(ExitCode::FAILURE);
    }
    println!("all {} checks passed", checks.len());
    Ok(ExitCode::SUCCESS)
}

// Referenced from the after-help text so the constant and the docs cannot
// drift apart silently.
const _: &str = OUTPUT_ENV;
