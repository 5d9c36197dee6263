//! Load costs, the system performance series, and report files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::network::{DistributionNetwork, NodeParams};

/// Cost of operating a load in a period: control cost on the unserved
/// fraction plus the extra shedding penalty when disconnected.
pub fn load_cost(node: &NodeParams, shed: bool, served: f64) -> f64 {
    let c = if shed { 1.0 } else { 0.0 };
    node.cost_control * (1.0 - served) + (node.cost_shed - node.cost_control) * c
}

/// Benefit of operating a load, measured against full shedding.
pub fn load_value(node: &NodeParams, shed: bool, served: f64) -> f64 {
    node.cost_shed - load_cost(node, shed, served)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PerformanceSeries {
    /// Percentage per period, averaged over scenarios.
    pub performance: Vec<f64>,
    /// Period costs per scenario.
    pub costs: Vec<Vec<f64>>,
    /// Mean total Stage II cost over scenarios.
    pub expected: f64,
}

/// Performance per period with equal scenario weights. Scenarios must share
/// the same number of periods.
pub fn system_performance(dn: &DistributionNetwork, period_costs: &[Vec<f64>]) -> PerformanceSeries {
    let total_shed = dn.total_shed_cost();
    let ns = period_costs.len();
    if ns == 0 {
        return PerformanceSeries::default();
    }
    let np = period_costs[0].len();
    let performance = (0..np)
        .map(|k| {
            period_costs
                .iter()
                .map(|c| {
                    if total_shed > 0.0 {
                        100.0 * (1.0 - c[k] / total_shed)
                    } else {
                        100.0
                    }
                })
                .sum::<f64>()
                / ns as f64
        })
        .collect();
    let expected = period_costs.iter().map(|c| c.iter().sum::<f64>()).sum::<f64>() / ns as f64;
    PerformanceSeries {
        performance,
        costs: period_costs.to_vec(),
        expected,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub allocation: String,
    pub first_stage: f64,
    pub expected_second_stage: f64,
    pub total: f64,
    pub series: PerformanceSeries,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

pub const PERFORMANCE_HEADER: [&str; 3] = ["method", "period", "performance"];
pub const PERIOD_COST_HEADER: [&str; 4] = ["allocation", "scenario", "period", "cost"];

/// Renders a CSV with `#`-prefixed manifest lines ahead of the header.
pub fn render_csv(manifest: &[String], header: &[&str], rows: &[Vec<String>]) -> Result<String, csv::Error> {
    let mut out = String::new();
    for line in manifest {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    out.push_str(&String::from_utf8_lossy(&bytes));
    Ok(out)
}

pub fn performance_rows(methods: &[MethodSummary]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for m in methods {
        for (k, r) in m.series.performance.iter().enumerate() {
            rows.push(vec![m.method.clone(), k.to_string(), format!("{r}")]);
        }
    }
    rows
}

/// Aligned plain-text summary of first-stage, expected second-stage, and
/// total cost per method.
pub fn summary_table(manifest: &[String], methods: &[MethodSummary]) -> String {
    let mut out = String::new();
    for line in manifest {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    let width = methods.iter().map(|m| m.method.len()).chain([6]).max().unwrap_or(6);
    let awidth = methods
        .iter()
        .map(|m| m.allocation.len())
        .chain([10])
        .max()
        .unwrap_or(10);
    out.push_str(&format!(
        "{:<width$}  {:<awidth$}  {:>14}  {:>14}  {:>14}\n",
        "method", "allocation", "J_I", "E[J_II]", "total"
    ));
    for m in methods {
        out.push_str(&format!(
            "{:<width$}  {:<awidth$}  {:>14.6}  {:>14.6}  {:>14.6}\n",
            m.method, m.allocation, m.first_stage, m.expected_second_stage, m.total
        ));
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<(), ReportError> {
    let mut f = fs::File::create(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_csv(path: &Path, manifest: &[String], header: &[&str], rows: &[Vec<String>]) -> Result<(), ReportError> {
    let text = render_csv(manifest, header, rows).map_err(|source| ReportError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    write_file(path, &text)
}

/// Writes `performance.csv` and `summary.txt` into `dir`.
pub fn emit_report(dir: &Path, manifest: &[String], methods: &[MethodSummary]) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let perf = dir.join("performance.csv");
    write_csv(&perf, manifest, &PERFORMANCE_HEADER, &performance_rows(methods))?;
    let summary = dir.join("summary.txt");
    write_file(&summary, &summary_table(manifest, methods))?;
    Ok(vec![perf, summary])
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    write_file(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(cls: f64, clc: f64) -> NodeParams {
        let mut n = NodeParams::blank(1);
        n.cost_shed = cls;
        n.cost_control = clc;
        n
    }

    #[test]
    fn full_service_is_free() {
        assert_eq!(load_cost(&node(1000.0, 450.0), false, 1.0), 0.0);
    }

    #[test]
    fn shed_value_is_zero() {
        let n = node(650.0, 0.0);
        assert_eq!(load_value(&n, true, 0.0), 0.0);
    }

    #[test]
    fn empty_series_renders_header_only() {
        let text = render_csv(&[], &PERFORMANCE_HEADER, &performance_rows(&[])).unwrap();
        assert_eq!(text, "method,period,performance\n");
    }
}
