//! `oracle-check`: the integral likelihood against the exact
//! linear-extension oracle on random partitioned preferences.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use plrank::likelihood::{exact_partial_log_prob, pp_log_likelihood};
use plrank::{ItemId, PartitionedPreference, Quadrature, Utilities};

use crate::io::write_config;
use crate::report::format_float;
use crate::NumericalFailure;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCheckCfg {
    pub cases: usize,
    pub max_items: usize,
    pub quad_nodes: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 500)]
    cases: usize,
    #[arg(long, default_value_t = 8)]
    max_items: usize,
    #[arg(long, default_value_t = 128)]
    quad_nodes: usize,
    /// Maximum allowed relative likelihood error.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional output directory for a per-case CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// A random partitioned preference over `0..n` (random block sizes).
pub fn random_partitioned_preference(n: usize, rng: &mut ChaCha8Rng) -> PartitionedPreference {
    let mut ids: Vec<ItemId> = (0..n as ItemId).collect();
    // Random composition of n.
    let mut blocks = Vec::new();
    while !ids.is_empty() {
        let take = rng.random_range(1..=ids.len());
        blocks.push(ids.drain(..take).collect::<Vec<_>>());
    }
    PartitionedPreference::new(blocks).expect("composition blocks are valid")
}

pub fn run_oracle_check(args: OracleCheckArgs) -> Result<()> {
    let cfg: OracleCheckCfg = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).context("config schema")?,
        None => OracleCheckCfg {
            cases: args.cases,
            max_items: args.max_items,
            quad_nodes: args.quad_nodes,
            tolerance: args.tolerance,
            seed: args.seed,
            out: args.out,
        },
    };
    let quad = Quadrature::new(cfg.quad_nodes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut writer = match &cfg.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = csv::Writer::from_path(dir.join("oracle.csv"))?;
            w.write_record(["case", "n_items", "n_partitions", "rel_error"])?;
            Some(w)
        }
        None => None,
    };

    let mut max_err = 0.0f64;
    let mut worst = 0usize;
    for case in 0..cfg.cases {
        let n = rng.random_range(2..=cfg.max_items.max(2));
        let pp = random_partitioned_preference(n, &mut rng);
        let w = Utilities::new((0..n).map(|_| rng.random_range(-2.0..2.0)).collect())?;
        let fast = pp_log_likelihood(&pp, &w, &quad)?;
        let exact = exact_partial_log_prob(&pp.to_partial_ranking(), &w, 1_000_000)?;
        let rel = (fast.exp() - exact.exp()).abs() / exact.exp();
        if rel > max_err {
            max_err = rel;
            worst = case;
        }
        if let Some(w) = writer.as_mut() {
            w.write_record([
                case.to_string(),
                n.to_string(),
                pp.num_partitions().to_string(),
                format_float(rel),
            ])?;
        }
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    if let Some(dir) = &cfg.out {
        write_config(dir, &cfg)?;
    }
    println!(
        "oracle-check: {} cases, max relative error {max_err:.3e} (case {worst}), tolerance {:.1e}",
        cfg.cases, cfg.tolerance
    );
    if max_err > cfg.tolerance {
        return Err(NumericalFailure(format!(
            "oracle mismatch: max relative error {max_err:.3e} exceeds {:.1e}",
            cfg.tolerance
        ))
        .into());
    }
    Ok(())
}
