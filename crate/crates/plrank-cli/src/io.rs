//! File formats: JSONL ranking datasets, JSON model checkpoints, JSONL
//! choice events, and CSV edge lists / node features.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use plrank::models::UtilityParams;
use plrank::netform::{
    CandidateScope, ChoiceEvent, ComponentKind, DirectedGraph, FeatureTable, NodeId,
};
use plrank::{ItemId, Mixture, PartialRanking};

/// Header line of a rankings dataset.
#[derive(Debug, Serialize, Deserialize)]
pub struct RankingsHeader {
    pub n_items: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RankingLine {
    pairs: Vec<(ItemId, ItemId)>,
}

/// Writes a dataset as one header line plus one poset per line.
pub fn write_rankings(path: &Path, n_items: usize, rankings: &[PartialRanking]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &RankingsHeader { n_items })?;
    out.write_all(b"\n")?;
    for pr in rankings {
        let line = RankingLine {
            pairs: pr.relations().to_vec(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_rankings(path: &Path) -> Result<(usize, Vec<PartialRanking>)> {
    let file = BufReader::new(File::open(path).with_context(|| format!("open {path:?}"))?);
    let mut lines = file.lines();
    let header: RankingsHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?).context("rankings header")?,
        None => bail!("empty rankings file"),
    };
    let mut rankings = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RankingLine = serde_json::from_str(&line).context("ranking line")?;
        rankings.push(PartialRanking::new(
            0..header.n_items as ItemId,
            parsed.pairs,
        )?);
    }
    Ok((header.n_items, rankings))
}

/// Model checkpoint: a free score vector, a linear model, or a mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointModel {
    Free {
        params: Vec<f64>,
    },
    Linear {
        feature_names: Vec<String>,
        coeffs: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        scope: Option<String>,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<CheckpointModel>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        shared_bindings: Vec<CheckpointBinding>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointBinding {
    pub name: String,
    /// `(component index, parameter index)` pairs.
    pub members: Vec<(usize, usize)>,
}

/// Checkpoint file: the model plus the seed and resolved config that
/// produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(flatten)]
    pub model: CheckpointModel,
    pub seed: u64,
    pub config: serde_json::Value,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, ckpt)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).with_context(|| format!("open {path:?}"))?;
    serde_json::from_reader(BufReader::new(file)).context("checkpoint schema")
}

impl CheckpointModel {
    pub fn free(params: &[f64]) -> Self {
        CheckpointModel::Free {
            params: params.to_vec(),
        }
    }

    pub fn from_mixture(mix: &Mixture) -> Self {
        CheckpointModel::Mixture {
            weights: mix.weights().to_vec(),
            components: mix
                .components()
                .iter()
                .map(|c| match c {
                    UtilityParams::Free(m) => CheckpointModel::free(m.params()),
                    UtilityParams::Linear(m) => CheckpointModel::Linear {
                        feature_names: m.feature_names().to_vec(),
                        coeffs: m.coeffs().to_vec(),
                        scope: None,
                    },
                })
                .collect(),
            shared_bindings: mix
                .shared_bindings()
                .iter()
                .map(|b| CheckpointBinding {
                    name: b.name.clone(),
                    members: b.members.iter().map(|m| (m.component, m.index)).collect(),
                })
                .collect(),
        }
    }

}

/// Edge list CSV: `src,dst,timestamp` with an optional timestamp field.
pub fn write_edge_list(path: &Path, g: &DirectedGraph) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["src", "dst", "timestamp"])?;
    let mut stamped: std::collections::HashMap<(NodeId, NodeId), i64> = Default::default();
    for &(s, d, t) in g.timestamps() {
        stamped.insert((s, d), t);
    }
    for src in 0..g.node_count() as NodeId {
        for &dst in g.out_neighbors(src) {
            match stamped.get(&(src, dst)) {
                Some(t) => w.write_record([src.to_string(), dst.to_string(), t.to_string()])?,
                None => w.write_record([src.to_string(), dst.to_string(), String::new()])?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_edge_list(path: &Path) -> Result<(usize, Vec<(NodeId, NodeId, Option<i64>)>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("open {path:?}"))?;
    let mut edges = Vec::new();
    let mut max_node = 0;
    for record in r.records() {
        let record = record?;
        let src: NodeId = record
            .get(0)
            .context("missing src")?
            .trim()
            .parse()
            .context("src")?;
        let dst: NodeId = record
            .get(1)
            .context("missing dst")?
            .trim()
            .parse()
            .context("dst")?;
        let ts = match record.get(2).map(str::trim) {
            None | Some("") => None,
            Some(t) => Some(t.parse::<i64>().context("timestamp")?),
        };
        max_node = max_node.max(src).max(dst);
        edges.push((src, dst, ts));
    }
    Ok((max_node as usize + 1, edges))
}

pub fn graph_from_edges(
    n_nodes: usize,
    edges: &[(NodeId, NodeId, Option<i64>)],
) -> Result<DirectedGraph> {
    let mut g = DirectedGraph::new(n_nodes);
    for &(s, d, t) in edges {
        g.add_edge(s, d, t)?;
    }
    Ok(g)
}

/// Node feature CSV: `node_id,<feature columns>`.
pub fn read_node_features(path: &Path, n_nodes: usize) -> Result<FeatureTable> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("open {path:?}"))?;
    let names: Vec<String> = r
        .headers()?
        .iter()
        .skip(1)
        .map(|s| s.to_string())
        .collect();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
    for record in r.records() {
        let record = record?;
        let node: usize = record.get(0).context("node_id")?.trim().parse()?;
        if node >= n_nodes {
            bail!("feature row for unknown node {node}");
        }
        let mut row = Vec::with_capacity(names.len());
        for v in record.iter().skip(1) {
            row.push(v.trim().parse::<f64>().context("feature value")?);
        }
        if row.len() != names.len() {
            bail!("feature row for node {node} has {} columns", row.len());
        }
        rows[node] = Some(row);
    }
    Ok(FeatureTable { names, rows })
}

/// One event per line with fields `source`, `chosen` (flattened, window
/// order), `window` (window index per chosen target), `candidates_scope`,
/// `negatives`, `label`.
#[derive(Debug, Serialize, Deserialize)]
struct EventLine {
    source: NodeId,
    chosen: Vec<NodeId>,
    window: Vec<usize>,
    candidates_scope: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    negatives: Option<Vec<NodeId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

pub fn write_events(path: &Path, events: &[ChoiceEvent]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for ev in events {
        let mut chosen = Vec::new();
        let mut window = Vec::new();
        for (w, block) in ev.windows.iter().enumerate() {
            for &t in block {
                chosen.push(t);
                window.push(w);
            }
        }
        let line = EventLine {
            source: ev.source,
            chosen,
            window,
            candidates_scope: match ev.scope {
                CandidateScope::Global => "global".into(),
                CandidateScope::Fof => "fof".into(),
            },
            negatives: ev.negatives.clone(),
            label: ev.label.map(|l| l.label().to_string()),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<ChoiceEvent>> {
    let file = BufReader::new(File::open(path).with_context(|| format!("open {path:?}"))?);
    let mut events = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EventLine = serde_json::from_str(&line).context("event line")?;
        if parsed.chosen.len() != parsed.window.len() {
            bail!("event for source {}: chosen/window length mismatch", parsed.source);
        }
        let n_windows = parsed.window.iter().copied().max().map_or(0, |m| m + 1);
        let mut windows = vec![Vec::new(); n_windows.max(1)];
        if parsed.chosen.is_empty() {
            windows = vec![Vec::new()];
        }
        for (&t, &w) in parsed.chosen.iter().zip(&parsed.window) {
            windows[w].push(t);
        }
        windows.retain(|w| !w.is_empty());
        if windows.is_empty() {
            windows.push(Vec::new());
        }
        let scope = match parsed.candidates_scope.as_str() {
            "global" => CandidateScope::Global,
            "fof" => CandidateScope::Fof,
            other => bail!("unknown candidates_scope {other:?}"),
        };
        let label = match parsed.label.as_deref() {
            None => None,
            Some(s) => Some(
                ComponentKind::parse(s).with_context(|| format!("unknown label {s:?}"))?,
            ),
        };
        events.push(ChoiceEvent {
            source: parsed.source,
            windows,
            scope,
            label,
            negatives: parsed.negatives,
        });
    }
    Ok(events)
}

/// Writes the resolved config next to a command's outputs.
pub fn write_config<T: Serialize>(out_dir: &Path, config: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(out_dir.join("config.json"))?);
    serde_json::to_writer_pretty(&mut f, config)?;
    f.write_all(b"\n")?;
    Ok(())
}
