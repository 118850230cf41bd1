//! `plrank`: experiments for learning (mixtures of) MNL models from
//! partial rankings and for choice-based network formation modeling.
//!
//! Exit codes: 0 success, 2 validation error (flags, files, schemas),
//! 3 numerical failure.

use clap::{Parser, Subcommand};
use plrank::likelihood::LikelihoodError;
use plrank::netform::NetformError;
use plrank::training::TrainingError;
use plrank_cli::{bench, eval, fit, netcmd, oracle, sim, NumericalFailure};

#[derive(Parser)]
#[command(
    name = "plrank",
    version,
    about = "Plackett-Luce models from partial rankings; choice-based network formation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic (mixture of) MNL partial-ranking datasets.
    SimulateRankings(sim::SimulateRankingsArgs),
    /// Grow a synthetic network with the (r, p) attachment mixture.
    SimulateNetwork(sim::SimulateNetworkArgs),
    /// Fit a single MNL to partial rankings.
    FitMnl(fit::FitMnlArgs),
    /// Fit a mixture of MNLs by EM with clustering initialization.
    FitMixture(fit::FitMixtureArgs),
    /// Fit attachment-mixture weights and the shared degree exponent.
    FitNetform(netcmd::FitNetformArgs),
    /// Runtime scaling of fitting across item counts.
    BenchScaling(bench::BenchScalingArgs),
    /// Precision@k link prediction from a model checkpoint.
    EvalLinkpred(eval::EvalLinkpredArgs),
    /// Compare the integral likelihood against the exact oracle.
    OracleCheck(oracle::OracleCheckArgs),
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<NumericalFailure>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<TrainingError>() {
            if matches!(e, TrainingError::NonFiniteLoss) {
                return 3;
            }
        }
        if let Some(e) = cause.downcast_ref::<LikelihoodError>() {
            if matches!(e, LikelihoodError::NonFiniteResult) {
                return 3;
            }
        }
        if let Some(e) = cause.downcast_ref::<NetformError>() {
            if matches!(e, NetformError::AllComponentsImpossible { .. }) {
                return 3;
            }
        }
    }
    2
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SimulateRankings(args) => sim::run_simulate_rankings(args),
        Command::SimulateNetwork(args) => sim::run_simulate_network(args),
        Command::FitMnl(args) => fit::run_fit_mnl(args),
        Command::FitMixture(args) => fit::run_fit_mixture(args),
        Command::FitNetform(args) => netcmd::run_fit_netform(args),
        Command::BenchScaling(args) => bench::run_bench_scaling(args),
        Command::EvalLinkpred(args) => eval::run_eval_linkpred(args),
        Command::OracleCheck(args) => oracle::run_oracle_check(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code_for(&err));
    }
}
