//! Compare two estimates of the function distribution: overlap statistics,
//! 90% probability boundaries, and the log-log scatter with functions
//! missing from one side pinned to that side's axis floor.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use funcprob::funcspace::{BinaryFunction, FrequencyTable, DEFAULT_MIN_COUNT};
use funcprob::gp::{renormalise_ep, Renormalisation};
use funcprob::stats;

use crate::svg::{ScatterPlot, ScatterPoint};

/// One side of a comparison: either a sampled frequency table or a map of
/// EP log probabilities.
pub enum Side {
    Sampled(FrequencyTable),
    LogProbs {
        probs: BTreeMap<BinaryFunction, f64>,
        estimator: String,
    },
}

impl Side {
    pub fn label(&self) -> String {
        match self {
            Side::Sampled(t) => t.provenance().to_string(),
            Side::LogProbs { estimator, .. } => estimator.clone(),
        }
    }

    pub fn function_len(&self) -> usize {
        match self {
            Side::Sampled(t) => t.function_len(),
            Side::LogProbs { probs, .. } => probs.keys().next().map_or(0, |f| f.len()),
        }
    }

    fn functions(&self) -> Vec<BinaryFunction> {
        match self {
            Side::Sampled(t) => t.iter().map(|(f, _)| f.clone()).collect(),
            Side::LogProbs { probs, .. } => probs.keys().cloned().collect(),
        }
    }

    /// Probability of `f`, or `None` when this side never saw it.
    fn probability(&self, f: &BinaryFunction) -> Option<f64> {
        match self {
            Side::Sampled(t) => {
                let c = t.count(f);
                (c > 0).then(|| c as f64 / t.total() as f64)
            }
            Side::LogProbs { probs, .. } => probs.get(f).map(|lp| lp.exp()),
        }
    }

    /// Axis floor for functions this side did not produce: one count's worth
    /// for sampled tables, a tenth of the smallest seen probability for
    /// log-probability maps.
    fn floor(&self) -> f64 {
        match self {
            Side::Sampled(t) => 1.0 / t.total() as f64,
            Side::LogProbs { probs, .. } => {
                let min = probs
                    .values()
                    .cloned()
                    .fold(f64::INFINITY, f64::min)
                    .exp();
                min / 10.0
            }
        }
    }

    fn boundary_90(&self) -> Option<f64> {
        match self {
            Side::Sampled(t) => t.boundary_90().ok(),
            Side::LogProbs { .. } => None,
        }
    }
}

/// Read a side from disk. Sampled tables are the three-column
/// `function_hex,count,probability` CSVs; EP outputs are the four-column
/// `function_hex,log10_prob,estimator,linking` CSVs, renormalised to unit
/// sum unless `renormalise` is false.
pub fn load_side(path: &Path, renormalise: bool) -> Result<Side> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default();
    if header.starts_with("function_hex,count") {
        let hex_len = text
            .lines()
            .nth(1)
            .and_then(|l| l.split(',').next())
            .map(|h| h.len())
            .context("table has no rows")?;
        let len = hex_len / 2 * 8;
        let table = FrequencyTable::from_csv(&text, len, name_from_path(path))?;
        Ok(Side::Sampled(table))
    } else if header.starts_with("function_hex,log10_prob") {
        let mut probs = BTreeMap::new();
        let mut estimator = String::from("ep");
        let mut len = 0;
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let hex = parts.next().context("missing hex")?;
            let log10: f64 = parts.next().context("missing log10")?.parse()?;
            if len == 0 {
                len = hex.len() / 2 * 8;
            }
            if let Some(e) = parts.next() {
                estimator = e.to_string();
            }
            probs.insert(
                BinaryFunction::from_hex(hex, len)?,
                log10 * std::f64::consts::LN_10,
            );
        }
        if probs.is_empty() {
            bail!("log-probability file {} has no rows", path.display());
        }
        let probs = if renormalise {
            renormalise_ep(&probs, Renormalisation::UnitSum)?
        } else {
            probs
        };
        Ok(Side::LogProbs { probs, estimator })
    } else {
        bail!(
            "{}: unrecognised header {header:?} (expected a frequency table or log-prob CSV)",
            path.display()
        );
    }
}

fn name_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".into())
}

#[derive(Serialize)]
pub struct ComparisonSummary {
    pub label_a: String,
    pub label_b: String,
    pub n_functions_a: usize,
    pub n_functions_b: usize,
    pub joint_count: usize,
    pub sum_a_on_joint: f64,
    pub sum_b_on_joint: f64,
    pub pearson_loglog: f64,
    pub boundary_90_a: Option<f64>,
    pub boundary_90_b: Option<f64>,
}

pub struct ComparisonBundle {
    pub summary: ComparisonSummary,
    pub points_csv: String,
    pub svg: String,
}

/// Build the union-of-functions comparison. `min_count` applies to sampled
/// sides when computing the joint-set statistics; `truth` colours points by
/// error count.
pub fn compare(
    a: &Side,
    b: &Side,
    truth: Option<&BinaryFunction>,
    min_count: u64,
) -> Result<ComparisonBundle> {
    if a.function_len() != b.function_len() {
        bail!(
            "function lengths disagree: {} vs {}",
            a.function_len(),
            b.function_len()
        );
    }
    // Union of function sets.
    let mut union: BTreeMap<BinaryFunction, ()> = BTreeMap::new();
    for f in a.functions() {
        union.insert(f, ());
    }
    for f in b.functions() {
        union.insert(f, ());
    }

    let floor_a = a.floor();
    let floor_b = b.floor();
    let mut points = Vec::new();
    let mut csv = String::from("function_hex,p_a,p_b,in_a,in_b,errors\n");
    let mut joint_log_a = Vec::new();
    let mut joint_log_b = Vec::new();
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    let mut joint_count = 0usize;

    let passes_min = |side: &Side, f: &BinaryFunction| -> bool {
        match side {
            Side::Sampled(t) => t.count(f) >= min_count,
            Side::LogProbs { probs, .. } => probs.contains_key(f),
        }
    };

    for f in union.keys() {
        let pa = a.probability(f);
        let pb = b.probability(f);
        let x = pa.unwrap_or(floor_a);
        let y = pb.unwrap_or(floor_b);
        let errors = truth.map(|t| f.error_count(t)).transpose()?;
        csv.push_str(&format!(
            "{},{:.12e},{:.12e},{},{},{}\n",
            f.to_hex(),
            x,
            y,
            pa.is_some(),
            pb.is_some(),
            errors.map_or(String::new(), |e| e.to_string())
        ));
        points.push(ScatterPoint { x, y, errors });
        if pa.is_some() && pb.is_some() && passes_min(a, f) && passes_min(b, f) {
            joint_count += 1;
            sum_a += x;
            sum_b += y;
            joint_log_a.push(x.ln());
            joint_log_b.push(y.ln());
        }
    }

    let pearson = if joint_count >= 2 {
        stats::pearson(&joint_log_a, &joint_log_b)
    } else {
        f64::NAN
    };
    let summary = ComparisonSummary {
        label_a: a.label(),
        label_b: b.label(),
        n_functions_a: a.functions().len(),
        n_functions_b: b.functions().len(),
        joint_count,
        sum_a_on_joint: sum_a,
        sum_b_on_joint: sum_b,
        pearson_loglog: pearson,
        boundary_90_a: a.boundary_90(),
        boundary_90_b: b.boundary_90(),
    };
    let svg = ScatterPlot {
        title: format!("{} vs {}", summary.label_a, summary.label_b),
        x_label: summary.label_a.clone(),
        y_label: summary.label_b.clone(),
        points,
        boundary_x: summary.boundary_90_a.map(|b| b.log10()),
    }
    .render();
    Ok(ComparisonBundle {
        summary,
        points_csv: csv,
        svg,
    })
}

/// Convenience used by tests and the acceptance suite.
pub fn compare_tables(
    a: &FrequencyTable,
    b: &FrequencyTable,
    truth: Option<&BinaryFunction>,
) -> Result<ComparisonBundle> {
    compare(
        &Side::Sampled(a.clone()),
        &Side::Sampled(b.clone()),
        truth,
        DEFAULT_MIN_COUNT,
    )
}
