//! `fit-mnl` and `fit-mixture`: single-MNL and mixture-EM fitting with
//! multi-seed trials, softmax-MSE reports, and training traces.
//!
//! With `--data`, every trial fits the given dataset (seeds drive the EM
//! initialization); without it, each trial regenerates its own synthetic
//! dataset from (N, n, p[, k]) under the trial seed and scores against the
//! generated truth, which is the full simulation protocol.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use plrank::models::{match_components, softmax_mse, UtilityParams};
use plrank::training::{
    em_fit, fit_single_mnl, EMConfig, EMTraceRow, FitOutcome, InitStrategy, OptimizerConfig,
};
use plrank::{FreeModel, PartialRanking, Quadrature};

use crate::io::{read_checkpoint, read_rankings, write_checkpoint, write_config, Checkpoint, CheckpointModel};
use crate::report::{format_float, MetricRow, MetricsReport};
use crate::sim::{generate_rankings, generate_truth};
use crate::{derive_seed, NumericalFailure};

/// Parses `--trim 10of50`-style specs into (discard, expected trials).
fn parse_trim(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once("of")
        .with_context(|| format!("--trim expects '<discard>of<trials>', got {s:?}"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMnlCfg {
    pub data: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub n_items: Option<usize>,
    pub n_rankings: Option<usize>,
    pub keep_prob: Option<f64>,
    pub lr: f64,
    pub steps: usize,
    pub grad_tol: f64,
    pub quad_nodes: usize,
    pub seed: u64,
    pub seeds: usize,
    pub trim: Option<String>,
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitMnlArgs {
    /// Rankings JSONL produced by simulate-rankings. When omitted, each
    /// trial generates its own dataset from --n-items/--n-rankings/--keep-prob.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Ground-truth checkpoint for softmax-MSE scoring.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    n_items: Option<usize>,
    #[arg(long)]
    n_rankings: Option<usize>,
    #[arg(long)]
    keep_prob: Option<f64>,
    /// AdaGrad initial learning rate.
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    /// Full-batch AdaGrad steps.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 128)]
    quad_nodes: usize,
    /// Root seed; trial seeds are derived by a counter split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of trials.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Discard the worst trials from the aggregate, e.g. `10of50`.
    #[arg(long)]
    trim: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn optimizer(lr: f64, steps: usize, grad_tol: f64) -> OptimizerConfig<f64> {
    OptimizerConfig {
        learning_rate: lr,
        max_steps: steps,
        gradient_tolerance: grad_tol,
        ..OptimizerConfig::default()
    }
}

/// Loads a fixed dataset + optional truth, or generates one per trial.
enum TrialData {
    Fixed {
        n_items: usize,
        rankings: Vec<PartialRanking>,
        truth: Option<Vec<Vec<f64>>>,
    },
    Generated {
        n_items: usize,
        n_rankings: usize,
        keep_prob: f64,
        k: usize,
    },
}

impl TrialData {
    fn for_trial(&self, seed: u64) -> Result<(Vec<PartialRanking>, Option<Vec<Vec<f64>>>, usize)> {
        match self {
            TrialData::Fixed {
                n_items,
                rankings,
                truth,
            } => Ok((rankings.clone(), truth.clone(), *n_items)),
            TrialData::Generated {
                n_items,
                n_rankings,
                keep_prob,
                k,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let truths = generate_truth(*n_items, *k, &mut rng);
                let (rankings, _) = generate_rankings(&truths, *n_rankings, *keep_prob, &mut rng)?;
                Ok((rankings, Some(truths), *n_items))
            }
        }
    }
}

fn truth_components(model: &CheckpointModel) -> Result<Vec<Vec<f64>>> {
    match model {
        CheckpointModel::Free { params } => Ok(vec![params.clone()]),
        CheckpointModel::Mixture { components, .. } => components
            .iter()
            .map(|c| match c {
                CheckpointModel::Free { params } => Ok(params.clone()),
                _ => bail!("truth mixture must have free components"),
            })
            .collect(),
        CheckpointModel::Linear { .. } => bail!("linear checkpoints have no per-item truth"),
    }
}

fn resolve_data(
    data: &Option<PathBuf>,
    truth: &Option<PathBuf>,
    n_items: Option<usize>,
    n_rankings: Option<usize>,
    keep_prob: Option<f64>,
    k: usize,
) -> Result<TrialData> {
    match data {
        Some(path) => {
            let (n_items, rankings) = read_rankings(path)?;
            let truth = match truth {
                Some(tp) => Some(truth_components(&read_checkpoint(tp)?.model)?),
                None => None,
            };
            Ok(TrialData::Fixed {
                n_items,
                rankings,
                truth,
            })
        }
        None => Ok(TrialData::Generated {
            n_items: n_items.context("--n-items is required without --data")?,
            n_rankings: n_rankings.context("--n-rankings is required without --data")?,
            keep_prob: keep_prob.context("--keep-prob is required without --data")?,
            k,
        }),
    }
}

fn write_fit_trace(path: &Path, fit: &FitOutcome<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "loss", "pi", "elapsed_ms"])?;
    for (i, (&loss, &ms)) in fit.loss_trace.iter().zip(&fit.step_ms).enumerate() {
        w.write_record([
            i.to_string(),
            format_float(loss),
            String::new(),
            ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_em_trace(path: &Path, trace: &[EMTraceRow<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "loss", "pi", "elapsed_ms"])?;
    for row in trace {
        let pi = row
            .weights
            .iter()
            .map(|&p| format_float(p))
            .collect::<Vec<_>>()
            .join(" ");
        w.write_record([
            row.round.to_string(),
            format_float(-row.log_likelihood),
            pi,
            row.elapsed_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_fit_mnl(args: FitMnlArgs) -> Result<()> {
    let cfg: FitMnlCfg = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).context("config schema")?,
        None => FitMnlCfg {
            data: args.data,
            truth: args.truth,
            n_items: args.n_items,
            n_rankings: args.n_rankings,
            keep_prob: args.keep_prob,
            lr: args.lr,
            steps: args.steps,
            grad_tol: args.grad_tol,
            quad_nodes: args.quad_nodes,
            seed: args.seed,
            seeds: args.seeds,
            trim: args.trim,
            out: args.out.context("--out is required")?,
        },
    };
    if cfg.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    fs::create_dir_all(&cfg.out)?;
    let quad = Quadrature::new(cfg.quad_nodes);
    let opt = optimizer(cfg.lr, cfg.steps, cfg.grad_tol);
    let source = resolve_data(
        &cfg.data,
        &cfg.truth,
        cfg.n_items,
        cfg.n_rankings,
        cfg.keep_prob,
        1,
    )?;
    let trim = match &cfg.trim {
        Some(s) => {
            let (discard, expect) = parse_trim(s)?;
            if expect != cfg.seeds {
                bail!("--trim expects {expect} trials but --seeds is {}", cfg.seeds);
            }
            discard
        }
        None => 0,
    };

    let mut rows = Vec::with_capacity(cfg.seeds);
    for trial in 0..cfg.seeds {
        let seed = derive_seed(cfg.seed, trial as u64);
        let (rankings, truth, n_items) = source.for_trial(seed)?;
        let fit = fit_single_mnl(&rankings, &FreeModel::zeros(n_items), &opt, &quad, None)?;
        let metric = match &truth {
            Some(t) if t.len() == 1 => softmax_mse(fit.model.params(), &t[0])?,
            Some(t) => bail!("truth has {} components; fit-mnl expects a single one", t.len()),
            None => *fit.loss_trace.last().expect("non-empty trace"),
        };
        if trial == 0 {
            write_checkpoint(
                &cfg.out.join("checkpoint.json"),
                &Checkpoint {
                    model: CheckpointModel::free(fit.model.params()),
                    seed,
                    config: serde_json::to_value(&cfg)?,
                },
            )?;
            write_fit_trace(&cfg.out.join("trace.csv"), &fit)?;
        }
        rows.push(MetricRow {
            setting: format!("fit-mnl n_items={n_items}"),
            seed,
            metric,
            elapsed_ms: fit.elapsed_ms,
            failed: false,
        });
    }
    let report = MetricsReport::new(rows, trim);
    report.write_csv(&cfg.out.join("metrics.csv"))?;
    write_config(&cfg.out, &cfg)?;
    println!(
        "fit-mnl: mean metric {:.6e} (stderr {:.2e}) over {} trial(s)",
        report.mean(),
        report.standard_error(),
        report.rows.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMixtureCfg {
    pub data: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub n_items: Option<usize>,
    pub n_rankings: Option<usize>,
    pub keep_prob: Option<f64>,
    pub k: usize,
    pub em_iters: usize,
    pub m_step_budget: usize,
    pub init_budget: usize,
    pub init: String,
    pub lr: f64,
    pub grad_tol: f64,
    pub quad_nodes: usize,
    pub seed: u64,
    pub seeds: usize,
    pub trim: Option<String>,
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitMixtureArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    n_items: Option<usize>,
    #[arg(long)]
    n_rankings: Option<usize>,
    #[arg(long)]
    keep_prob: Option<f64>,
    /// Mixture components to fit.
    #[arg(long, short = 'k', default_value_t = 3)]
    k: usize,
    /// EM rounds B.
    #[arg(long, default_value_t = 10)]
    em_iters: usize,
    /// Inner AdaGrad steps per M-step.
    #[arg(long, default_value_t = 50)]
    m_step_budget: usize,
    /// AdaGrad steps per clustering-initialization fit.
    #[arg(long, default_value_t = 100)]
    init_budget: usize,
    /// Initialization: clustering | random.
    #[arg(long, default_value = "clustering")]
    init: String,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 128)]
    quad_nodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Discard the worst trials from the aggregate, e.g. `10of50`.
    #[arg(long)]
    trim: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run_fit_mixture(args: FitMixtureArgs) -> Result<()> {
    let cfg: FitMixtureCfg = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).context("config schema")?,
        None => FitMixtureCfg {
            data: args.data,
            truth: args.truth,
            n_items: args.n_items,
            n_rankings: args.n_rankings,
            keep_prob: args.keep_prob,
            k: args.k,
            em_iters: args.em_iters,
            m_step_budget: args.m_step_budget,
            init_budget: args.init_budget,
            init: args.init,
            lr: args.lr,
            grad_tol: args.grad_tol,
            quad_nodes: args.quad_nodes,
            seed: args.seed,
            seeds: args.seeds,
            trim: args.trim,
            out: args.out.context("--out is required")?,
        },
    };
    if cfg.seeds == 0 || cfg.k == 0 {
        bail!("--seeds and --k must be at least 1");
    }
    let init = match cfg.init.as_str() {
        "clustering" => InitStrategy::Clustering,
        "random" => InitStrategy::Random,
        other => bail!("unknown --init {other:?} (expected clustering|random)"),
    };
    fs::create_dir_all(&cfg.out)?;
    let quad = Quadrature::new(cfg.quad_nodes);
    let source = resolve_data(
        &cfg.data,
        &cfg.truth,
        cfg.n_items,
        cfg.n_rankings,
        cfg.keep_prob,
        cfg.k,
    )?;
    let trim = match &cfg.trim {
        Some(s) => {
            let (discard, expect) = parse_trim(s)?;
            if expect != cfg.seeds {
                bail!("--trim expects {expect} trials but --seeds is {}", cfg.seeds);
            }
            discard
        }
        None => 0,
    };

    let mut rows = Vec::with_capacity(cfg.seeds);
    for trial in 0..cfg.seeds {
        let seed = derive_seed(cfg.seed, trial as u64);
        let (rankings, truth, _) = source.for_trial(seed)?;
        let mut em_cfg = EMConfig::new(cfg.k, cfg.em_iters, seed);
        em_cfg.init = init;
        em_cfg.m_step = optimizer(cfg.lr, cfg.m_step_budget, cfg.grad_tol);
        em_cfg.init_optimizer = optimizer(cfg.lr, cfg.init_budget, cfg.grad_tol);
        let started = std::time::Instant::now();
        let out = em_fit(&rankings, &em_cfg, &quad)?;
        let elapsed_ms = started.elapsed().as_millis() as u64;

        let estimated: Vec<Vec<f64>> = out
            .mixture
            .components()
            .iter()
            .map(|c| match c {
                UtilityParams::Free(m) => m.params().to_vec(),
                UtilityParams::Linear(_) => unreachable!("EM fits free components"),
            })
            .collect();
        let metric = match &truth {
            Some(t) if t.len() == estimated.len() => match_components(&estimated, t)?.1,
            Some(_) => bail!("truth has a different component count than --k"),
            None => -out
                .trace
                .last()
                .map(|r| r.log_likelihood)
                .unwrap_or(f64::NAN),
        };
        if trial == 0 {
            write_checkpoint(
                &cfg.out.join("checkpoint.json"),
                &Checkpoint {
                    model: CheckpointModel::from_mixture(&out.mixture),
                    seed,
                    config: serde_json::to_value(&cfg)?,
                },
            )?;
            write_em_trace(&cfg.out.join("trace.csv"), &out.trace)?;
        }
        rows.push(MetricRow {
            setting: format!("fit-mixture k={}", cfg.k),
            seed,
            metric,
            elapsed_ms,
            failed: out.degenerate,
        });
    }
    let report = MetricsReport::new(rows, trim);
    report.write_csv(&cfg.out.join("metrics.csv"))?;
    write_config(&cfg.out, &cfg)?;
    let failures = report.rows.iter().filter(|r| r.failed).count();
    println!(
        "fit-mixture: mean metric {:.6e} (stderr {:.2e}), {} degenerate of {} trial(s)",
        report.mean(),
        report.standard_error(),
        failures,
        report.rows.len()
    );
    if report.mean().is_nan() {
        return Err(NumericalFailure("mixture metric is NaN".into()).into());
    }
    Ok(())
}
