//! Synthetic data generation: (mixtures of) MNL partial rankings by
//! pairwise-comparison sampling, and (r, p)-model network growth.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use plrank::likelihood::sample_full_ranking;
use plrank::netform::{grow_network, GrowthConfig};
use plrank::{ItemId, PartialRanking, Utilities};

use crate::io::{
    self, write_checkpoint, write_config, Checkpoint, CheckpointBinding, CheckpointModel,
};

/// Ground-truth utilities: `k` components drawn uniformly on [-2, 2].
pub fn generate_truth(n_items: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| (0..n_items).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

/// Draws `n` partial rankings: sample a component (uniform weights), draw a
/// full ranking from it, then keep each of the N(N-1)/2 pairwise
/// comparisons independently with probability `keep_prob`.
pub fn generate_rankings(
    truths: &[Vec<f64>],
    n: usize,
    keep_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<PartialRanking>, Vec<usize>)> {
    let k = truths.len();
    let n_items = truths.first().map_or(0, Vec::len);
    let utilities: Vec<Utilities> = truths
        .iter()
        .map(|t| Utilities::new(t.clone()))
        .collect::<Result<_, _>>()?;
    let mut rankings = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let comp = if k == 1 { 0 } else { rng.random_range(0..k) };
        let order = sample_full_ranking(&utilities[comp], rng);
        let mut pairs = Vec::new();
        for i in 0..n_items {
            for j in (i + 1)..n_items {
                if rng.random::<f64>() < keep_prob {
                    pairs.push((order[i], order[j]));
                }
            }
        }
        rankings.push(PartialRanking::new(0..n_items as ItemId, pairs)?);
        labels.push(comp);
    }
    Ok((rankings, labels))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateRankingsCfg {
    pub n_items: usize,
    pub n_rankings: usize,
    pub keep_prob: f64,
    pub k: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SimulateRankingsArgs {
    /// Number of items N.
    #[arg(long)]
    n_items: Option<usize>,
    /// Number of rankings n.
    #[arg(long)]
    n_rankings: Option<usize>,
    /// Probability of keeping each pairwise comparison.
    #[arg(long)]
    keep_prob: Option<f64>,
    /// Mixture components (1 = single MNL).
    #[arg(long, short = 'k', default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Load the full config from JSON instead of flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run_simulate_rankings(args: SimulateRankingsArgs) -> Result<()> {
    let cfg: SimulateRankingsCfg = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).context("config schema")?,
        None => SimulateRankingsCfg {
            n_items: args.n_items.context("--n-items is required")?,
            n_rankings: args.n_rankings.context("--n-rankings is required")?,
            keep_prob: args.keep_prob.context("--keep-prob is required")?,
            k: args.k,
            seed: args.seed,
            out: args.out.context("--out is required")?,
        },
    };
    if !(0.0..=1.0).contains(&cfg.keep_prob) {
        bail!("--keep-prob must be in [0, 1]");
    }
    if cfg.k == 0 || cfg.n_items == 0 {
        bail!("--k and --n-items must be positive");
    }
    fs::create_dir_all(&cfg.out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truths = generate_truth(cfg.n_items, cfg.k, &mut rng);
    let (rankings, _) = generate_rankings(&truths, cfg.n_rankings, cfg.keep_prob, &mut rng)?;

    let model = if cfg.k == 1 {
        CheckpointModel::free(&truths[0])
    } else {
        CheckpointModel::Mixture {
            weights: vec![1.0 / cfg.k as f64; cfg.k],
            components: truths.iter().map(|t| CheckpointModel::free(t)).collect(),
            shared_bindings: vec![],
        }
    };
    write_checkpoint(
        &cfg.out.join("truth.json"),
        &Checkpoint {
            model,
            seed: cfg.seed,
            config: serde_json::to_value(&cfg)?,
        },
    )?;
    io::write_rankings(&cfg.out.join("rankings.jsonl"), cfg.n_items, &rankings)?;
    write_config(&cfg.out, &cfg)?;
    println!(
        "wrote {} rankings over {} items to {}",
        rankings.len(),
        cfg.n_items,
        cfg.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateNetworkCfg {
    pub r: f64,
    pub p: f64,
    pub alpha: f64,
    pub init_nodes: usize,
    pub init_edge_prob: f64,
    pub hub_count: usize,
    pub hub_boost_min: u32,
    pub hub_boost_max: u32,
    pub source_fraction: f64,
    pub edges_per_source: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl SimulateNetworkCfg {
    pub fn growth(&self) -> GrowthConfig {
        GrowthConfig {
            r: self.r,
            p: self.p,
            alpha: self.alpha,
            init_nodes: self.init_nodes,
            init_edge_prob: self.init_edge_prob,
            hub_count: self.hub_count,
            hub_boost: (self.hub_boost_min, self.hub_boost_max),
            source_fraction: self.source_fraction,
            edges_per_source: self.edges_per_source,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
pub struct SimulateNetworkArgs {
    /// Probability of the global candidate scope.
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    /// Probability of uniform attachment.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    init_nodes: usize,
    #[arg(long, default_value_t = 0.005)]
    init_edge_prob: f64,
    #[arg(long, default_value_t = 20)]
    hub_count: usize,
    #[arg(long, default_value_t = 50)]
    hub_boost_min: u32,
    #[arg(long, default_value_t = 80)]
    hub_boost_max: u32,
    #[arg(long, default_value_t = 0.5)]
    source_fraction: f64,
    #[arg(long, default_value_t = 5)]
    edges_per_source: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run_simulate_network(args: SimulateNetworkArgs) -> Result<()> {
    let cfg: SimulateNetworkCfg = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).context("config schema")?,
        None => SimulateNetworkCfg {
            r: args.r,
            p: args.p,
            alpha: args.alpha,
            init_nodes: args.init_nodes,
            init_edge_prob: args.init_edge_prob,
            hub_count: args.hub_count,
            hub_boost_min: args.hub_boost_min,
            hub_boost_max: args.hub_boost_max,
            source_fraction: args.source_fraction,
            edges_per_source: args.edges_per_source,
            seed: args.seed,
            out: args.out.context("--out is required")?,
        },
    };
    fs::create_dir_all(&cfg.out)?;
    let (graph, events) = grow_network(&cfg.growth())?;
    // The edge list is the pre-growth network the choice probabilities were
    // computed from; the events carry the new edges.
    io::write_edge_list(&cfg.out.join("network.csv"), &graph)?;
    io::write_events(&cfg.out.join("events.jsonl"), &events)?;
    write_config(&cfg.out, &cfg)?;
    println!(
        "wrote initial network ({} nodes, {} edges) and {} events to {}",
        graph.node_count(),
        graph.edge_count(),
        events.len(),
        cfg.out.display()
    );
    Ok(())
}

/// Checkpoint for a fitted network mixture: linear components over the
/// log-degree feature, exponent shared via a binding group.
pub fn netform_checkpoint(
    labels: &[String],
    weights: &[f64],
    alpha: f64,
    has_log_degree: &[bool],
) -> CheckpointModel {
    let components = labels
        .iter()
        .zip(has_log_degree)
        .map(|(label, &pa)| {
            let scope = if label.ends_with("-fof") { "fof" } else { "global" };
            if pa {
                CheckpointModel::Linear {
                    feature_names: vec!["log_degree".into()],
                    coeffs: vec![alpha],
                    scope: Some(scope.into()),
                }
            } else {
                CheckpointModel::Linear {
                    feature_names: vec![],
                    coeffs: vec![],
                    scope: Some(scope.into()),
                }
            }
        })
        .collect();
    let members: Vec<(usize, usize)> = has_log_degree
        .iter()
        .enumerate()
        .filter(|(_, &pa)| pa)
        .map(|(i, _)| (i, 0))
        .collect();
    let shared_bindings = if members.len() > 1 {
        vec![CheckpointBinding {
            name: "alpha".into(),
            members,
        }]
    } else {
        vec![]
    };
    CheckpointModel::Mixture {
        weights: weights.to_vec(),
        components,
        shared_bindings,
    }
}
