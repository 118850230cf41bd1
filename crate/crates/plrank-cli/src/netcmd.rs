//! `fit-netform`: attachment-mixture recovery on network choice events.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use plrank::netform::{fit_network_mixture, grow_network, ComponentKind, NetEMConfig};
use plrank::Quadrature;

use crate::io::{
    graph_from_edges, read_edge_list, read_events, write_checkpoint, write_config, Checkpoint,
};
use crate::report::format_float;
use crate::sim::netform_checkpoint;
use crate::{derive_seed, NumericalFailure};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitNetformCfg {
    pub network: Option<PathBuf>,
    pub events: Option<PathBuf>,
    /// Growth parameters used when no data files are given: each trial
    /// grows its own network under the trial seed.
    pub r: f64,
    pub p: f64,
    pub init_nodes: usize,
    pub components: Vec<String>,
    pub em_iters: usize,
    pub alpha_init: f64,
    pub alpha_steps: usize,
    pub naive: bool,
    pub quad_nodes: usize,
    pub seed: u64,
    pub seeds: usize,
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitNetformArgs {
    /// Edge-list CSV of the (pre-growth) network.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Events JSONL. Requires --network.
    #[arg(long)]
    events: Option<PathBuf>,
    /// r used when generating data per trial (no --network given).
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    /// p used when generating data per trial.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 1000)]
    init_nodes: usize,
    /// Comma-separated component specs from {ua, pa, ua-fof, pa-fof}.
    #[arg(long, default_value = "ua,pa,ua-fof,pa-fof")]
    components: String,
    #[arg(long, default_value_t = 25)]
    em_iters: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha_init: f64,
    #[arg(long, default_value_t = 25)]
    alpha_steps: usize,
    /// Score events with the independent top-one baseline likelihood.
    #[arg(long, default_value_t = false)]
    naive: bool,
    #[arg(long, default_value_t = 64)]
    quad_nodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run_fit_netform(args: FitNetformArgs) -> Result<()> {
    let cfg: FitNetformCfg = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).context("config schema")?,
        None => FitNetformCfg {
            network: args.network,
            events: args.events,
            r: args.r,
            p: args.p,
            init_nodes: args.init_nodes,
            components: args
                .components
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
            em_iters: args.em_iters,
            alpha_init: args.alpha_init,
            alpha_steps: args.alpha_steps,
            naive: args.naive,
            quad_nodes: args.quad_nodes,
            seed: args.seed,
            seeds: args.seeds,
            out: args.out.context("--out is required")?,
        },
    };
    if cfg.components.is_empty() {
        bail!("--components must name at least one of ua, pa, ua-fof, pa-fof");
    }
    let kinds: Vec<ComponentKind> = cfg
        .components
        .iter()
        .map(|s| ComponentKind::parse(s).with_context(|| format!("unknown component {s:?}")))
        .collect::<Result<_>>()?;
    let specs: Vec<_> = kinds.iter().map(|k| k.spec()).collect();
    if cfg.network.is_some() != cfg.events.is_some() {
        bail!("--network and --events must be given together");
    }
    fs::create_dir_all(&cfg.out)?;

    let quad = Quadrature::new(cfg.quad_nodes);
    let em_cfg = NetEMConfig {
        rounds: cfg.em_iters,
        alpha_init: cfg.alpha_init,
        alpha_steps: cfg.alpha_steps,
        naive: cfg.naive,
        ..NetEMConfig::default()
    };

    let fixed = match (&cfg.network, &cfg.events) {
        (Some(np), Some(ep)) => {
            let (n_nodes, edges) = read_edge_list(np)?;
            let graph = graph_from_edges(n_nodes, &edges)?;
            let events = read_events(ep)?;
            Some((graph, events))
        }
        _ => None,
    };

    let labels: Vec<String> = specs.iter().map(|s| s.label()).collect();
    let has_log_degree: Vec<bool> = specs
        .iter()
        .map(|s| s.utility == plrank::netform::UtilityKind::LogDegree)
        .collect();

    let mut w = csv::Writer::from_path(cfg.out.join("netform.csv"))?;
    let mut header = vec!["row".to_string(), "seed".to_string()];
    header.extend(labels.iter().map(|l| format!("weight_{l}")));
    header.extend(["alpha", "log_likelihood", "elapsed_ms", "degenerate"].map(String::from));
    w.write_record(&header)?;

    let mut alphas = Vec::new();
    let mut weight_rows: Vec<Vec<f64>> = Vec::new();
    for trial in 0..cfg.seeds {
        let seed = derive_seed(cfg.seed, trial as u64);
        let (graph, events);
        match &fixed {
            Some((g, e)) => {
                graph = g.clone();
                events = e.clone();
            }
            None => {
                let growth = plrank::netform::GrowthConfig {
                    r: cfg.r,
                    p: cfg.p,
                    init_nodes: cfg.init_nodes,
                    seed,
                    ..plrank::netform::GrowthConfig::default()
                };
                (graph, events) = grow_network(&growth)?;
            }
        }
        let started = std::time::Instant::now();
        let fit = fit_network_mixture(&graph, &events, &specs, &em_cfg, &quad)?;
        let elapsed_ms = started.elapsed().as_millis() as u64;

        let mut record = vec!["seed".to_string(), seed.to_string()];
        record.extend(fit.weights.iter().map(|&p| format_float(p)));
        record.push(format_float(fit.alpha));
        record.push(format_float(
            fit.trace.last().map(|r| r.log_likelihood).unwrap_or(f64::NAN),
        ));
        record.push(elapsed_ms.to_string());
        record.push(fit.degenerate.to_string());
        w.write_record(&record)?;

        write_checkpoint(
            &cfg.out.join(format!("checkpoint_{trial}.json")),
            &Checkpoint {
                model: netform_checkpoint(&labels, &fit.weights, fit.alpha, &has_log_degree),
                seed,
                config: serde_json::to_value(&cfg)?,
            },
        )?;
        alphas.push(fit.alpha);
        weight_rows.push(fit.weights.clone());
    }

    // Aggregate rows: mean and standard error per column.
    let n = alphas.len() as f64;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n;
    let stderr = |xs: &[f64], m: f64| {
        if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
                / xs.len() as f64)
                .sqrt()
        }
    };
    let k = labels.len();
    let weight_cols: Vec<Vec<f64>> = (0..k)
        .map(|c| weight_rows.iter().map(|r| r[c]).collect())
        .collect();
    let alpha_mean = mean(&alphas);
    let mut mean_rec = vec!["mean".to_string(), String::new()];
    let mut se_rec = vec!["stderr".to_string(), String::new()];
    for col in &weight_cols {
        let m = mean(col);
        mean_rec.push(format_float(m));
        se_rec.push(format_float(stderr(col, m)));
    }
    mean_rec.push(format_float(alpha_mean));
    se_rec.push(format_float(stderr(&alphas, alpha_mean)));
    for rec in [&mut mean_rec, &mut se_rec] {
        rec.extend([String::new(), String::new(), String::new()]);
    }
    w.write_record(&mean_rec)?;
    w.write_record(&se_rec)?;
    w.flush()?;

    write_config(&cfg.out, &cfg)?;
    let weights_str = labels
        .iter()
        .zip(&weight_cols)
        .map(|(l, col)| format!("{l}={:.3}", mean(col)))
        .collect::<Vec<_>>()
        .join(" ");
    println!(
        "fit-netform: {} | alpha={:.3} over {} trial(s)",
        weights_str,
        alpha_mean,
        cfg.seeds
    );
    if alpha_mean.is_nan() {
        return Err(NumericalFailure("alpha estimate is NaN".into()).into());
    }
    Ok(())
}
