//! `bench-scaling`: fitting runtime across item counts, plus a large-N
//! stability probe of a single likelihood+gradient evaluation.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use plrank::likelihood::numgrb_log_likelihood_and_grad;
use plrank::training::fit_single_mnl;
use plrank::{FreeModel, Optimizer, Quadrature, Utilities};

use crate::io::write_config;
use crate::report::format_float;
use crate::sim::{generate_rankings, generate_truth};
use crate::{derive_seed, NumericalFailure};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchScalingCfg {
    pub n_grid: Vec<usize>,
    pub n_rankings: usize,
    pub keep_prob: f64,
    pub steps: usize,
    pub quad_nodes: usize,
    /// Item count for the single-evaluation stability probe (0 disables).
    pub stability_n: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchScalingArgs {
    /// Comma-separated item counts, e.g. 50,100,200,400.
    #[arg(long, default_value = "50,100,200,400")]
    n_grid: String,
    #[arg(long, default_value_t = 200)]
    n_rankings: usize,
    #[arg(long, default_value_t = 0.25)]
    keep_prob: f64,
    /// AdaGrad steps per fit.
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = 128)]
    quad_nodes: usize,
    #[arg(long, default_value_t = 1000)]
    stability_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Least-squares slope of ln(runtime) against ln(N).
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[derive(Debug, Serialize)]
struct BenchSummary {
    slope: f64,
    stability_n: usize,
    stability_value: Option<f64>,
    stability_grad_inf_norm: Option<f64>,
    stability_finite: Option<bool>,
}

pub fn run_bench_scaling(args: BenchScalingArgs) -> Result<()> {
    let cfg: BenchScalingCfg = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).context("config schema")?,
        None => BenchScalingCfg {
            n_grid: args
                .n_grid
                .split(',')
                .map(|s| s.trim().parse::<usize>().context("--n-grid entry"))
                .collect::<Result<_>>()?,
            n_rankings: args.n_rankings,
            keep_prob: args.keep_prob,
            steps: args.steps,
            quad_nodes: args.quad_nodes,
            stability_n: args.stability_n,
            seed: args.seed,
            out: args.out.context("--out is required")?,
        },
    };
    if cfg.n_grid.len() < 2 {
        bail!("--n-grid needs at least two item counts for a slope");
    }
    fs::create_dir_all(&cfg.out)?;
    let quad = Quadrature::new(cfg.quad_nodes);
    let opt = Optimizer::default().with_max_steps(cfg.steps);

    let mut w = csv::Writer::from_path(cfg.out.join("scaling.csv"))?;
    w.write_record(["n_items", "runtime_ms", "final_loss"])?;
    let mut points = Vec::new();
    for (i, &n_items) in cfg.n_grid.iter().enumerate() {
        let seed = derive_seed(cfg.seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truths = generate_truth(n_items, 1, &mut rng);
        let (rankings, _) = generate_rankings(&truths, cfg.n_rankings, cfg.keep_prob, &mut rng)?;
        let started = Instant::now();
        let fit = fit_single_mnl(&rankings, &FreeModel::zeros(n_items), &opt, &quad, None)?;
        let ms = started.elapsed().as_millis().max(1) as f64;
        let final_loss = *fit.loss_trace.last().expect("non-empty trace");
        w.write_record([
            n_items.to_string(),
            format_float(ms),
            format_float(final_loss),
        ])?;
        points.push((n_items as f64, ms));
        println!("N = {n_items:>5}: {ms:>8.0} ms, final loss {final_loss:.3}");
    }
    w.flush()?;
    let slope = log_log_slope(&points);

    // One likelihood+gradient evaluation at large N must stay finite.
    let mut summary = BenchSummary {
        slope,
        stability_n: cfg.stability_n,
        stability_value: None,
        stability_grad_inf_norm: None,
        stability_finite: None,
    };
    if cfg.stability_n > 0 {
        let n = cfg.stability_n;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 10_000));
        let truths = generate_truth(n, 1, &mut rng);
        let (rankings, _) = generate_rankings(&truths, 1, cfg.keep_prob, &mut rng)?;
        let w_vec = Utilities::new(truths[0].clone())?;
        let (value, grad) = numgrb_log_likelihood_and_grad(&rankings[0], &w_vec, &quad)?;
        let grad_norm = grad.inf_norm();
        let finite = value.is_finite() && grad.as_slice().iter().all(|g| g.is_finite());
        summary.stability_value = Some(value);
        summary.stability_grad_inf_norm = Some(grad_norm);
        summary.stability_finite = Some(finite);
        println!(
            "stability probe N = {n}: log-lik {value:.3}, grad inf-norm {grad_norm:.3e}, finite = {finite}"
        );
        if !finite {
            return Err(
                NumericalFailure(format!("non-finite evaluation at N = {n}")).into(),
            );
        }
    }
    println!("log-log runtime slope: {slope:.3}");

    fs::write(
        cfg.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    write_config(&cfg.out, &cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [50.0, 100.0, 200.0, 400.0]
            .iter()
            .map(|&n: &f64| (n, 3.0 * n.powf(2.2)))
            .collect();
        assert!((log_log_slope(&pts) - 2.2).abs() < 1e-9);
    }
}
