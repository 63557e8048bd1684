//! Comparison tables and file emission.
//!
//! Tables carry one row per strategy and one column per metric, aggregated
//! across segments by mean (the headline) and median. CSV output is
//! RFC 4180 (CRLF line endings) with six significant digits in tables and
//! full-precision shortest-round-trip floats in per-step records; the
//! column-minimizing cell of each table is marked with a trailing `*`.

use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};

use gpvol::forecast::BacktestReport;
use gpvol::metrics::MetricSuite;
use gpvol::returns::{PriceSeries, ProxyKind};
use gpvol::{Error, Result};

/// Version stamp present in every JSON emission.
pub const SCHEMA_VERSION: u32 = 1;

/// Table column order.
pub const METRIC_COLUMNS: [&str; 6] = ["mse1", "mse2", "mae1", "mae2", "mdrae", "smape"];

/// How per-segment metrics are pooled into a table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregate {
    Mean,
    Median,
}

impl Aggregate {
    pub fn name(self) -> &'static str {
        match self {
            Aggregate::Mean => "mean",
            Aggregate::Median => "median",
        }
    }

    fn pool(self, values: &mut Vec<f64>) -> f64 {
        match self {
            Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregate::Median => {
                values.sort_by(f64::total_cmp);
                let n = values.len();
                if n % 2 == 1 {
                    values[n / 2]
                } else {
                    0.5 * (values[n / 2 - 1] + values[n / 2])
                }
            }
        }
    }
}

/// One table cell: a pooled metric, the undefined-MdRAE marker, or a failed
/// run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Value(f64),
    /// MdRAE was undefined (flat realized series) on every segment.
    Undefined,
    /// Every segment's run failed for this strategy.
    Failed,
}

impl Cell {
    fn csv(self, winner: bool) -> String {
        match self {
            Cell::Value(v) => {
                let mut s = fmt_sig6(v);
                if winner {
                    s.push('*');
                }
                s
            }
            Cell::Undefined => "undefined".into(),
            Cell::Failed => "failed".into(),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Value(v) => serializer.serialize_f64(*v),
            Cell::Undefined => serializer.serialize_str("undefined"),
            Cell::Failed => serializer.serialize_str("failed"),
        }
    }
}

/// One strategy's pooled metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub strategy: String,
    #[serde(serialize_with = "cells_as_seq")]
    pub cells: [Cell; 6],
    /// Segments that contributed (failed runs are excluded).
    pub segments: usize,
}

fn cells_as_seq<S: Serializer>(
    cells: &[Cell; 6],
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = serializer.serialize_seq(Some(cells.len()))?;
    for cell in cells {
        seq.serialize_element(cell)?;
    }
    seq.end()
}

/// Strategy × metric table for one (dataset, proxy kind) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub dataset: String,
    pub proxy: ProxyKind,
    pub aggregate: Aggregate,
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    /// Pool per-segment suites into one table. `suites[i]` holds row i's
    /// per-segment results, `None` marking a failed run.
    pub fn build(
        dataset: &str,
        proxy: ProxyKind,
        aggregate: Aggregate,
        strategies: &[String],
        suites: &[Vec<Option<MetricSuite>>],
    ) -> Result<Self> {
        if strategies.len() != suites.len() {
            return Err(Error::InvalidInput(format!(
                "table needs one suite list per strategy: {} vs {}",
                strategies.len(),
                suites.len()
            )));
        }
        let rows = strategies
            .iter()
            .zip(suites)
            .map(|(label, per_segment)| {
                let ok: Vec<&MetricSuite> = per_segment.iter().flatten().collect();
                let cells = if ok.is_empty() {
                    [Cell::Failed; 6]
                } else {
                    let pool = |extract: &dyn Fn(&MetricSuite) -> Option<f64>| {
                        let mut values: Vec<f64> = ok.iter().filter_map(|s| extract(s)).collect();
                        if values.is_empty() {
                            Cell::Undefined
                        } else {
                            Cell::Value(aggregate.pool(&mut values))
                        }
                    };
                    [
                        pool(&|s| Some(s.mse1)),
                        pool(&|s| Some(s.mse2)),
                        pool(&|s| Some(s.mae1)),
                        pool(&|s| Some(s.mae2)),
                        pool(&|s| s.mdrae),
                        pool(&|s| Some(s.smape)),
                    ]
                };
                TableRow {
                    strategy: label.clone(),
                    cells,
                    segments: ok.len(),
                }
            })
            .collect();
        Ok(ComparisonTable {
            dataset: dataset.to_string(),
            proxy,
            aggregate,
            rows,
        })
    }

    /// Row index of the minimizing value per column, mirroring the bold
    /// convention of printed comparison tables.
    pub fn winners(&self) -> [Option<usize>; 6] {
        let mut winners = [None; 6];
        for (col, winner) in winners.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for (row, r) in self.rows.iter().enumerate() {
                if let Cell::Value(v) = r.cells[col] {
                    if v < best {
                        best = v;
                        *winner = Some(row);
                    }
                }
            }
        }
        winners
    }

    /// RFC 4180 rendering with six significant digits and `*` on each
    /// column's winner.
    pub fn to_csv(&self) -> String {
        let winners = self.winners();
        let mut out = String::from("strategy,segments");
        for col in METRIC_COLUMNS {
            out.push(',');
            out.push_str(col);
        }
        out.push_str("\r\n");
        for (row, r) in self.rows.iter().enumerate() {
            out.push_str(&r.strategy);
            out.push(',');
            out.push_str(&r.segments.to_string());
            for (col, cell) in r.cells.iter().enumerate() {
                out.push(',');
                out.push_str(&cell.csv(winners[col] == Some(row)));
            }
            out.push_str("\r\n");
        }
        out
    }

    /// Plain-text rendering for the terminal.
    pub fn to_text(&self) -> String {
        let winners = self.winners();
        let mut grid: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        let mut header = vec!["strategy".to_string(), "segs".to_string()];
        header.extend(METRIC_COLUMNS.iter().map(|c| c.to_string()));
        grid.push(header);
        for (row, r) in self.rows.iter().enumerate() {
            let mut line = vec![r.strategy.clone(), r.segments.to_string()];
            line.extend(
                r.cells
                    .iter()
                    .enumerate()
                    .map(|(col, cell)| cell.csv(winners[col] == Some(row))),
            );
            grid.push(line);
        }
        let mut widths = vec![0usize; grid[0].len()];
        for line in &grid {
            for (w, field) in widths.iter_mut().zip(line) {
                *w = (*w).max(field.len());
            }
        }
        let mut out = format!(
            "# {} / {} proxy / {} over segments\n",
            self.dataset,
            proxy_slug(self.proxy),
            self.aggregate.name()
        );
        for line in &grid {
            let rendered: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(field, w)| format!("{field:>w$}"))
                .collect();
            out.push_str(rendered.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Six significant digits; scientific notation outside [1e-4, 1e6).
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        format!("{v:.5e}")
    } else {
        format!("{v:.*}", (5 - exp).max(0) as usize)
    }
}

/// Short file-name tag for a proxy kind.
pub fn proxy_slug(kind: ProxyKind) -> &'static str {
    match kind {
        ProxyKind::Abs => "abs",
        ProxyKind::Squared => "squared",
        ProxyKind::AbsEnvelope => "abs-envelope",
        ProxyKind::PosEnvelope => "pos-envelope",
        ProxyKind::NegEnvelope => "neg-envelope",
    }
}

/// Per-step records as RFC 4180 CSV at full precision (shortest
/// round-trip), ready for external plotting.
pub fn records_csv(report: &BacktestReport) -> String {
    let mut out =
        String::from("time,forecast,lower,upper,realized,log_mean,log_variance,fallback\r\n");
    for r in &report.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\r\n",
            r.time, r.forecast, r.lower, r.upper, r.realized, r.log_mean, r.log_variance, r.fallback
        ));
    }
    out
}

/// A synthetic price series in the same CSV format ingestion reads.
pub fn prices_csv(series: &PriceSeries) -> String {
    let mut out = String::from("timestamp,price\r\n");
    for (ts, price) in series.timestamps.iter().zip(&series.prices) {
        out.push_str(&format!("{ts},{price}\r\n"));
    }
    out
}
