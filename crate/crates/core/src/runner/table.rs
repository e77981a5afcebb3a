//! Comparison tables: one row per model, Standard plus one column per
//! pacing shape, row minima flagged per metric.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::read_json;

/// Aggregated (MAE, MSE) for one model under one arm. With several seeds
/// the value is the mean and `spread` is max minus min.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub mae: f64,
    pub mse: f64,
    pub n_seeds: usize,
    pub mae_spread: f64,
    pub mse_spread: f64,
}

impl MetricCell {
    fn single(mae: f64, mse: f64) -> Self {
        MetricCell {
            mae,
            mse,
            n_seeds: 1,
            mae_spread: 0.0,
            mse_spread: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub cells: Vec<Option<MetricCell>>,
    /// Column indices holding the row's minimum MAE / MSE.
    pub min_mae: Vec<usize>,
    pub min_mse: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// Canonical column order used by the comparison tables.
const COLUMN_ORDER: [&str; 7] = [
    "standard",
    "linear",
    "log",
    "quadratic",
    "exponential",
    "step",
    "root",
];

fn column_rank(name: &str) -> (usize, String) {
    match COLUMN_ORDER.iter().position(|c| *c == name) {
        Some(i) => (i, String::new()),
        None => (COLUMN_ORDER.len(), name.to_string()),
    }
}

impl ResultsTable {
    /// Recomputes the per-row minima flags. Ties flag every minimal cell.
    pub fn compute_flags(&mut self) {
        for row in self.rows.iter_mut() {
            row.min_mae.clear();
            row.min_mse.clear();
            let min_mae = row
                .cells
                .iter()
                .flatten()
                .map(|c| c.mae)
                .fold(f64::INFINITY, f64::min);
            let min_mse = row
                .cells
                .iter()
                .flatten()
                .map(|c| c.mse)
                .fold(f64::INFINITY, f64::min);
            for (i, cell) in row.cells.iter().enumerate() {
                if let Some(c) = cell {
                    if c.mae == min_mae {
                        row.min_mae.push(i);
                    }
                    if c.mse == min_mse {
                        row.min_mse.push(i);
                    }
                }
            }
        }
    }

    fn format_cell(cell: &Option<MetricCell>, flag_mae: bool, flag_mse: bool, md: bool) -> String {
        match cell {
            None => "-".to_string(),
            Some(c) => {
                let fmt = |v: f64, flagged: bool| {
                    let text = format!("{:.1}", v);
                    match (flagged, md) {
                        (true, true) => format!("**{text}**"),
                        (true, false) => format!("*{text}*"),
                        (false, _) => text,
                    }
                };
                let mut out = format!("{} / {}", fmt(c.mae, flag_mae), fmt(c.mse, flag_mse));
                if c.n_seeds > 1 {
                    out.push_str(&format!(
                        " (n={}, ±{:.1}/{:.1})",
                        c.n_seeds,
                        c.mae_spread / 2.0,
                        c.mse_spread / 2.0
                    ));
                }
                out
            }
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n", self.title);
        out.push_str("| Model |");
        for c in &self.columns {
            out.push_str(&format!(" {c} (MAE / MSE) |"));
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &self.columns {
            out.push_str("---|");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("| {} |", row.model));
            for (i, cell) in row.cells.iter().enumerate() {
                out.push_str(&format!(
                    " {} |",
                    Self::format_cell(
                        cell,
                        row.min_mae.contains(&i),
                        row.min_mse.contains(&i),
                        true
                    )
                ));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["Model".to_string()];
        header.extend(self.columns.iter().cloned());
        let mut grid: Vec<Vec<String>> = vec![header];
        for row in &self.rows {
            let mut line = vec![row.model.clone()];
            for (i, cell) in row.cells.iter().enumerate() {
                line.push(Self::format_cell(
                    cell,
                    row.min_mae.contains(&i),
                    row.min_mse.contains(&i),
                    false,
                ));
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{}\n", self.title);
        for (ri, row) in grid.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            out.push_str(&line.join("  "));
            out.push('\n');
            if ri == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out.push_str("(* flags the row minimum per metric; lower is better)\n");
        out
    }

    /// Looks up a row by model label.
    pub fn row(&self, model: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Deserialize)]
struct ReferenceRow {
    model: String,
    cells: Vec<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
struct ReferenceTable {
    caption: String,
    columns: Vec<String>,
    rows: Vec<ReferenceRow>,
}

/// Renders the bundled published numbers (`part_a` or `part_b`) for
/// side-by-side comparison. These values are reference data only; nothing
/// in this repository asserts they are reproducible at desk scale.
pub fn reference_table(part: &str) -> Result<ResultsTable> {
    let raw = include_str!("../../data/reference_results.json");
    let tables: BTreeMap<String, ReferenceTable> = serde_json::from_str(raw)
        .map_err(|e| Error::json(Path::new("data/reference_results.json"), e))?;
    let table = tables
        .get(part)
        .ok_or_else(|| Error::NotFound(format!("reference table '{part}'")))?;

    let mut out = ResultsTable {
        title: table.caption.clone(),
        columns: table.columns.clone(),
        rows: table
            .rows
            .iter()
            .map(|r| TableRow {
                model: r.model.clone(),
                cells: r
                    .cells
                    .iter()
                    .map(|&[mae, mse]| Some(MetricCell::single(mae, mse)))
                    .collect(),
                min_mae: vec![],
                min_mse: vec![],
            })
            .collect(),
    };
    out.compute_flags();
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct RunAggregates {
    mae: f64,
    mse: f64,
}

/// Builds a results table from completed run directories under `runs_dir`.
/// Rows are models (prefixed by dataset when several are present), columns
/// follow the canonical Standard-plus-shapes order, and multi-seed cells
/// aggregate to mean with spread.
pub fn render_table(runs_dir: &Path) -> Result<ResultsTable> {
    use super::ResolvedRunConfig;

    let mut observations: BTreeMap<(String, (usize, String)), Vec<(f64, f64)>> = BTreeMap::new();
    let mut datasets = std::collections::BTreeSet::new();

    let entries = std::fs::read_dir(runs_dir).map_err(|e| Error::io(runs_dir, e))?;
    for entry in entries.filter_map(|e| e.ok()) {
        let dir = entry.path();
        if !dir.is_dir() || !dir.join("DONE").exists() {
            continue;
        }
        let resolved: ResolvedRunConfig = read_json(&dir.join("resolved_config.json"))?;
        let report: RunAggregates = read_json(&dir.join("report.json"))?;
        datasets.insert(resolved.dataset.name().to_string());
        let key = (
            format!("{}::{}", resolved.dataset.name(), resolved.model.display_label()),
            column_rank(&resolved.arm.column_name()),
        );
        observations.entry(key).or_default().push((report.mae, report.mse));
    }

    if observations.is_empty() {
        return Err(Error::NotFound(format!(
            "no completed runs under {}",
            runs_dir.display()
        )));
    }

    let single_dataset = datasets.len() == 1;
    let mut columns: Vec<(usize, String)> = observations.keys().map(|(_, c)| c.clone()).collect();
    columns.sort();
    columns.dedup();
    let column_names: Vec<String> = columns
        .iter()
        .map(|(rank, name)| {
            if name.is_empty() {
                COLUMN_ORDER[*rank].to_string()
            } else {
                name.clone()
            }
        })
        .collect();

    let mut row_labels: Vec<String> = observations.keys().map(|(m, _)| m.clone()).collect();
    row_labels.sort();
    row_labels.dedup();

    let mut rows = Vec::new();
    for label in row_labels {
        let mut cells = Vec::with_capacity(columns.len());
        for col in &columns {
            let cell = observations.get(&(label.clone(), col.clone())).map(|obs| {
                let n = obs.len();
                let mean = |f: fn(&(f64, f64)) -> f64| {
                    obs.iter().map(f).sum::<f64>() / n as f64
                };
                let spread = |f: fn(&(f64, f64)) -> f64| {
                    let lo = obs.iter().map(f).fold(f64::INFINITY, f64::min);
                    let hi = obs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
                    hi - lo
                };
                MetricCell {
                    mae: mean(|o| o.0),
                    mse: mean(|o| o.1),
                    n_seeds: n,
                    mae_spread: spread(|o| o.0),
                    mse_spread: spread(|o| o.1),
                }
            });
            cells.push(cell);
        }
        let display = if single_dataset {
            label.split("::").nth(1).unwrap_or(&label).to_string()
        } else {
            label.replace("::", " / ")
        };
        rows.push(TableRow {
            model: display,
            cells,
            min_mae: vec![],
            min_mse: vec![],
        });
    }

    let mut table = ResultsTable {
        title: format!("Results under {}", runs_dir.display()),
        columns: column_names,
        rows,
    };
    table.compute_flags();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_part_b_mcnn_row() {
        let table = reference_table("part_b").unwrap();
        let std_col = table.column_index("standard").unwrap();
        let lin_col = table.column_index("linear").unwrap();
        let row = table.row("MCNN").unwrap();
        let std_cell = row.cells[std_col].as_ref().unwrap();
        assert_eq!((std_cell.mae, std_cell.mse), (26.4, 41.3));
        let lin_cell = row.cells[lin_col].as_ref().unwrap();
        assert_eq!((lin_cell.mae, lin_cell.mse), (19.2, 32.2));
        assert_eq!(row.min_mae, vec![lin_col]);
        assert_eq!(row.min_mse, vec![lin_col]);
    }

    #[test]
    fn reference_part_a_csrnet_row() {
        let table = reference_table("part_a").unwrap();
        let std_col = table.column_index("standard").unwrap();
        let lin_col = table.column_index("linear").unwrap();
        let row = table.row("CSRNet").unwrap();
        assert_eq!(row.cells[std_col].as_ref().unwrap().mae, 68.2);
        assert_eq!(row.cells[lin_col].as_ref().unwrap().mae, 58.4);
        assert!(row.min_mae.contains(&lin_col));
        assert!(row.min_mse.contains(&lin_col));
    }

    #[test]
    fn flagged_minima_satisfy_row_minimum_property() {
        for part in ["part_a", "part_b"] {
            let table = reference_table(part).unwrap();
            for row in &table.rows {
                assert!(!row.min_mae.is_empty());
                for &i in &row.min_mae {
                    let flagged = row.cells[i].as_ref().unwrap().mae;
                    for cell in row.cells.iter().flatten() {
                        assert!(flagged <= cell.mae);
                    }
                }
                for &i in &row.min_mse {
                    let flagged = row.cells[i].as_ref().unwrap().mse;
                    for cell in row.cells.iter().flatten() {
                        assert!(flagged <= cell.mse);
                    }
                }
            }
        }
    }

    #[test]
    fn singleton_table_flags_its_only_cell() {
        let mut table = ResultsTable {
            title: "one".into(),
            columns: vec!["standard".into()],
            rows: vec![TableRow {
                model: "m".into(),
                cells: vec![Some(MetricCell::single(4.2, 6.1))],
                min_mae: vec![],
                min_mse: vec![],
            }],
        };
        table.compute_flags();
        assert_eq!(table.rows[0].min_mae, vec![0]);
        assert_eq!(table.rows[0].min_mse, vec![0]);
    }

    #[test]
    fn markdown_bolds_minima() {
        let table = reference_table("part_b").unwrap();
        let md = table.to_markdown();
        assert!(md.contains("**19.2**"));
        assert!(md.contains("**32.2**"));
        assert!(md.contains("| MCNN |"));
    }

    #[test]
    fn unknown_part_is_an_error() {
        assert!(reference_table("part_c").is_err());
    }
}
