//! `eval-linkpred`: precision@k of a checkpoint model on choice events.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use plrank::netform::{negative_sample, precision_at_k, structural_features, ChoiceEvent, NodeId};
use plrank::Scalar;

use crate::io::{
    graph_from_edges, read_checkpoint, read_edge_list, read_events, read_node_features,
    write_config, CheckpointModel,
};
use crate::report::{format_float, precision_bar_chart, write_svg};
use crate::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalLinkpredCfg {
    pub network: PathBuf,
    pub events: PathBuf,
    pub checkpoint: PathBuf,
    pub features: Option<PathBuf>,
    pub ks: Vec<usize>,
    /// Sample this many negatives per event when events carry none.
    pub negatives: Option<usize>,
    pub seed: u64,
    pub svg: bool,
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalLinkpredArgs {
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
    /// Model checkpoint (free, linear, or mixture).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Optional node feature CSV appended to structural features.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Comma-separated cutoffs.
    #[arg(long, default_value = "1,3,5")]
    ks: String,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also emit a bar chart (precision.svg).
    #[arg(long, default_value_t = false)]
    svg: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run_eval_linkpred(args: EvalLinkpredArgs) -> Result<()> {
    let cfg: EvalLinkpredCfg = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).context("config schema")?,
        None => EvalLinkpredCfg {
            network: args.network.context("--network is required")?,
            events: args.events.context("--events is required")?,
            checkpoint: args.checkpoint.context("--checkpoint is required")?,
            features: args.features,
            ks: args
                .ks
                .split(',')
                .map(|s| s.trim().parse::<usize>().context("--ks entry"))
                .collect::<Result<_>>()?,
            negatives: args.negatives,
            seed: args.seed,
            svg: args.svg,
            out: args.out.context("--out is required")?,
        },
    };
    if cfg.ks.is_empty() || cfg.ks.contains(&0) {
        bail!("--ks must list positive cutoffs");
    }
    fs::create_dir_all(&cfg.out)?;

    let (n_nodes, edges) = read_edge_list(&cfg.network)?;
    let mut graph = graph_from_edges(n_nodes, &edges)?;
    if let Some(fp) = &cfg.features {
        graph.set_features(read_node_features(fp, n_nodes)?);
    }
    let mut events = read_events(&cfg.events)?;
    events.retain(|e| e.chosen_count() > 0);
    if events.is_empty() {
        bail!("no events with chosen targets");
    }
    if events.iter().any(|e| e.negatives.is_none()) {
        let Some(count) = cfg.negatives else {
            bail!("events have no negative samples; pass --negatives <count> to sample them");
        };
        events = events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if e.negatives.is_some() {
                    Ok(e.clone())
                } else {
                    Ok(negative_sample(&graph, e, count, derive_seed(cfg.seed, i as u64))?)
                }
            })
            .collect::<Result<_>>()?;
    }

    let ckpt = read_checkpoint(&cfg.checkpoint)?;
    let scorer = build_scorer(&ckpt.model, &graph)?;
    let precision = precision_at_k(&events, &cfg.ks, |ev, v| scorer(ev, v))?;

    let mut w = csv::Writer::from_path(cfg.out.join("precision.csv"))?;
    w.write_record(["k", "precision"])?;
    for (&k, &p) in &precision {
        w.write_record([k.to_string(), format_float(p)])?;
        println!("precision@{k} = {p:.4}");
    }
    w.flush()?;
    if cfg.svg {
        let values: Vec<(usize, f64)> = precision.iter().map(|(&k, &p)| (k, p)).collect();
        write_svg(&cfg.out.join("precision.svg"), &precision_bar_chart(&values))?;
    }
    write_config(&cfg.out, &cfg)?;
    Ok(())
}

/// Builds a candidate scorer from a checkpoint:
/// - free: the candidate's utility entry;
/// - linear: coefficients applied to the named structural (+ external)
///   feature columns;
/// - mixture: weight-averaged component scores.
fn build_scorer<'a>(
    model: &'a CheckpointModel,
    graph: &'a plrank::netform::DirectedGraph,
) -> Result<Box<dyn Fn(&ChoiceEvent, NodeId) -> Scalar + 'a>> {
    match model {
        CheckpointModel::Free { params } => {
            let params = params.clone();
            Ok(Box::new(move |_ev, v| {
                params.get(v as usize).copied().unwrap_or(f64::NEG_INFINITY)
            }))
        }
        CheckpointModel::Linear { coeffs, feature_names, .. } => {
            // Resolve each named coefficient against the feature columns,
            // so models over feature subsets score correctly. The name
            // `log_degree` is the raw (uncensored) log in-degree used by
            // the attachment components; a zero-degree candidate scores
            // -inf under it.
            enum Column {
                Index(usize),
                RawLogDegree,
            }
            let mut available = plrank::netform::structural_feature_names();
            if let Some(table) = graph.features() {
                available.extend(table.names.iter().cloned());
            }
            let mut resolved = Vec::with_capacity(coeffs.len());
            for (name, &c) in feature_names.iter().zip(coeffs) {
                let column = if name == "log_degree" {
                    Column::RawLogDegree
                } else {
                    Column::Index(
                        available
                            .iter()
                            .position(|a| a == name)
                            .with_context(|| format!("checkpoint uses unknown feature {name:?}"))?,
                    )
                };
                resolved.push((column, c));
            }
            Ok(Box::new(move |ev, v| {
                match structural_features(graph, ev.source, v) {
                    Ok(x) => resolved
                        .iter()
                        .map(|(col, c)| match col {
                            Column::Index(i) => c * x[*i],
                            Column::RawLogDegree => {
                                let d = graph.in_degree(v).unwrap_or(0);
                                if d == 0 {
                                    f64::NEG_INFINITY
                                } else {
                                    c * (d as f64).ln()
                                }
                            }
                        })
                        .sum(),
                    Err(_) => f64::NEG_INFINITY,
                }
            }))
        }
        CheckpointModel::Mixture {
            weights,
            components,
            ..
        } => {
            let scorers = components
                .iter()
                .map(|c| build_scorer(c, graph))
                .collect::<Result<Vec<_>>>()?;
            let weights = weights.clone();
            Ok(Box::new(move |ev, v| {
                weights
                    .iter()
                    .zip(&scorers)
                    .map(|(&p, s)| {
                        let sc = s(ev, v);
                        if sc == f64::NEG_INFINITY {
                            0.0
                        } else {
                            p * sc
                        }
                    })
                    .sum()
            }))
        }
    }
}
