//! Per-seed metric rows, aggregates (mean / standard error / trimmed
//! mean), CSV emission, and the optional SVG bar chart.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Result;

/// One trial's outcome.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub setting: String,
    pub seed: u64,
    pub metric: f64,
    pub elapsed_ms: u64,
    pub failed: bool,
}

/// Rows plus recomputable aggregates.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    /// Number of worst rows (largest metric) excluded from the trimmed mean.
    pub trim: usize,
}

impl MetricsReport {
    pub fn new(rows: Vec<MetricRow>, trim: usize) -> Self {
        Self { rows, trim }
    }

    pub fn mean(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.metric))
    }

    pub fn standard_error(&self) -> f64 {
        let n = self.rows.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let var = self
            .rows
            .iter()
            .map(|r| (r.metric - m).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        (var / n as f64).sqrt()
    }

    /// Mean after discarding the `trim` worst (largest-metric) rows.
    pub fn trimmed_mean(&self) -> Option<f64> {
        if self.trim == 0 || self.trim >= self.rows.len() {
            return None;
        }
        let mut metrics: Vec<f64> = self.rows.iter().map(|r| r.metric).collect();
        metrics.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let keep = metrics.len() - self.trim;
        Some(mean(metrics.into_iter().take(keep)))
    }

    /// CSV with one row per trial plus aggregate rows (`row` column is
    /// `seed`, `mean`, `stderr`, or `trimmed_mean`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["row", "setting", "seed", "metric", "elapsed_ms", "failed"])?;
        for r in &self.rows {
            w.write_record([
                "seed".to_string(),
                r.setting.clone(),
                r.seed.to_string(),
                format_float(r.metric),
                r.elapsed_ms.to_string(),
                r.failed.to_string(),
            ])?;
        }
        let setting = self
            .rows
            .first()
            .map(|r| r.setting.clone())
            .unwrap_or_default();
        let mut aggregate = |name: &str, value: f64| -> Result<()> {
            w.write_record([
                name.to_string(),
                setting.clone(),
                String::new(),
                format_float(value),
                String::new(),
                String::new(),
            ])?;
            Ok(())
        };
        aggregate("mean", self.mean())?;
        aggregate("stderr", self.standard_error())?;
        if let Some(t) = self.trimmed_mean() {
            aggregate("trimmed_mean", t)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Shortest round-trip float formatting, so aggregates recomputed from the
/// CSV match the in-memory values exactly.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

/// Minimal static SVG bar chart of precision@k values.
pub fn precision_bar_chart(values: &[(usize, f64)]) -> String {
    let width = 80 + 90 * values.len().max(1);
    let height = 260;
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = write!(
        svg,
        "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>"
    );
    // Axis line and unit gridline.
    let base_y = 220.0;
    let top_y = 30.0;
    let _ = write!(
        svg,
        "<line x1=\"50\" y1=\"{base_y}\" x2=\"{}\" y2=\"{base_y}\" stroke=\"black\"/>",
        width - 20
    );
    for (i, &(k, v)) in values.iter().enumerate() {
        let x = 70 + 90 * i;
        let h = (v.clamp(0.0, 1.0)) * (base_y - top_y);
        let y = base_y - h;
        let _ = write!(
            svg,
            "<rect x=\"{x}\" y=\"{y:.2}\" width=\"50\" height=\"{h:.2}\" fill=\"#4878a8\"/>"
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">p@{k}</text>",
            x + 25,
            base_y + 18.0
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{y:.2}\" dy=\"-4\" font-size=\"12\" text-anchor=\"middle\">{v:.4}</text>",
            x + 25
        );
    }
    svg.push_str("</svg>");
    svg
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(svg.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
