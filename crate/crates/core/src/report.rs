//! Error-rate tables over tasks and embedding configurations.
//!
//! The text form has two tables: error rates (rows = tasks, columns =
//! `provider (N shot)`), and per-entry metrics. Missing cells print `-`.
//! The JSON mirror carries the same cell strings next to the raw numbers:
//!
//! ```json
//! {
//!   "columns": ["mock (5 shot)"],
//!   "error_table": [{"task": "ad-nc", "cells": ["3.64"]}],
//!   "entries": [{"task": "ad-nc", "provider": "mock", "shots": 5, "n": 55,
//!                "acc": 0.9636, "sen": 1.0, "spe": 0.93, "auc": 0.99 (binary only),
//!                "error_rate": 3.64, "confusion": [[..], [..]],
//!                "cells": {"acc": "96.36", ..., "auc": "0.9900", "error": "3.64"}}]
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::metrics::Metrics;
use crate::task::Task;

pub const MISSING: &str = "-";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub task: Task,
    pub provider: String,
    pub shots: u8,
    pub metrics: Metrics,
}

impl ReportEntry {
    pub fn column(&self) -> String {
        format!("{} ({} shot)", self.provider, self.shots)
    }
}

pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

pub fn error_cell(m: &Metrics) -> String {
    format!("{:.2}", m.error_rate)
}

pub fn auc_cell(m: &Metrics) -> String {
    m.auc.map_or_else(|| MISSING.to_string(), |a| format!("{a:.4}"))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
}

/// Cells of the error-rate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub columns: Vec<String>,
    pub rows: Vec<(Task, Vec<String>)>,
}

impl Report {
    pub fn new(entries: Vec<ReportEntry>) -> Self {
        Report { entries }
    }

    pub fn push(&mut self, entry: ReportEntry) {
        self.entries.push(entry);
    }

    /// Later entries for the same (task, column) replace earlier ones.
    pub fn error_table(&self) -> ErrorTable {
        let mut columns: Vec<String> = Vec::new();
        let mut cells: BTreeMap<Task, BTreeMap<String, String>> = BTreeMap::new();
        for e in &self.entries {
            let col = e.column();
            if !columns.contains(&col) {
                columns.push(col.clone());
            }
            cells.entry(e.task).or_default().insert(col, error_cell(&e.metrics));
        }
        let rows = cells
            .into_iter()
            .map(|(task, by_col)| {
                let row = columns
                    .iter()
                    .map(|c| by_col.get(c).cloned().unwrap_or_else(|| MISSING.to_string()))
                    .collect();
                (task, row)
            })
            .collect();
        ErrorTable { columns, rows }
    }

    pub fn render_text(&self) -> String {
        let table = self.error_table();
        let mut out = String::new();
        let task_w = 10;
        let col_w = table.columns.iter().map(|c| c.len()).max().unwrap_or(0).max(6);
        out.push_str("Error rate (%)\n");
        let _ = write!(out, "{:<task_w$}", "task");
        for c in &table.columns {
            let _ = write!(out, "  {c:>col_w$}");
        }
        out.push('\n');
        for (task, row) in &table.rows {
            let _ = write!(out, "{:<task_w$}", task.name());
            for cell in row {
                let _ = write!(out, "  {cell:>col_w$}");
            }
            out.push('\n');
        }
        out.push_str("\nMetrics\n");
        let _ = writeln!(
            out,
            "{:<task_w$}  {:<col_w$}  {:>5}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
            "task", "embedding", "n", "ACC", "SEN", "SPE", "AUC", "error"
        );
        for e in &self.entries {
            let m = &e.metrics;
            let _ = writeln!(
                out,
                "{:<task_w$}  {:<col_w$}  {:>5}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
                e.task.name(),
                e.column(),
                m.count(),
                pct(m.acc),
                pct(m.sen),
                pct(m.spe),
                auc_cell(m),
                error_cell(m)
            );
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let table = self.error_table();
        let entries: Vec<Value> = self
            .entries
            .iter()
            .map(|e| {
                let m = &e.metrics;
                let mut v = json!({
                    "task": e.task.name(),
                    "provider": e.provider,
                    "shots": e.shots,
                    "n": m.count(),
                    "acc": m.acc,
                    "sen": m.sen,
                    "spe": m.spe,
                    "error_rate": m.error_rate,
                    "confusion": m.confusion,
                    "cells": {
                        "acc": pct(m.acc),
                        "sen": pct(m.sen),
                        "spe": pct(m.spe),
                        "auc": auc_cell(m),
                        "error": error_cell(m),
                    },
                });
                if let Some(auc) = m.auc {
                    v["auc"] = json!(auc);
                }
                v
            })
            .collect();
        json!({
            "columns": table.columns,
            "error_table": table.rows.iter().map(|(t, cells)| json!({"task": t.name(), "cells": cells})).collect::<Vec<_>>(),
            "entries": entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics_with_acc(correct: usize, total: usize, auc: Option<f64>) -> Metrics {
        let wrong = total - correct;
        let half = correct / 2;
        Metrics::from_confusion(vec![vec![half, wrong], vec![0, correct - half]], auc).unwrap()
    }

    #[test]
    fn accuracy_96_36_pairs_with_error_3_64() {
        let m = metrics_with_acc(9636, 10000, Some(0.99));
        assert_eq!(pct(m.acc), "96.36");
        let r = Report::new(vec![ReportEntry {
            task: Task::AdNc,
            provider: "mock".into(),
            shots: 5,
            metrics: m,
        }]);
        let t = r.error_table();
        assert_eq!(t.rows, vec![(Task::AdNc, vec!["3.64".to_string()])]);
        assert!(r.render_text().contains("3.64"));
    }

    #[test]
    fn missing_cells_and_auc_dash() {
        let r = Report::new(vec![
            ReportEntry {
                task: Task::AdNc,
                provider: "mock".into(),
                shots: 5,
                metrics: metrics_with_acc(9, 10, Some(0.95)),
            },
            ReportEntry {
                task: Task::FourWay,
                provider: "mock".into(),
                shots: 0,
                metrics: Metrics::from_confusion(
                    vec![vec![1, 0, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 1, 0], vec![0, 0, 0, 1]],
                    None,
                )
                .unwrap(),
            },
        ]);
        let t = r.error_table();
        assert_eq!(t.columns, vec!["mock (5 shot)", "mock (0 shot)"]);
        assert_eq!(t.rows[0].1, vec!["10.00", "-"]);
        assert_eq!(t.rows[1].1, vec!["-", "0.00"]);
        let json = r.to_json();
        assert_eq!(json["entries"][1]["cells"]["auc"], "-");
        assert!(json["entries"][1].get("auc").is_none());
        assert_eq!(json["entries"][0]["auc"], 0.95);
    }

    #[test]
    fn json_mirrors_table() {
        let r = Report::new(vec![ReportEntry {
            task: Task::LmciNc,
            provider: "http:gpt-4".into(),
            shots: 1,
            metrics: metrics_with_acc(7, 8, Some(0.8)),
        }]);
        let parsed: Value = serde_json::from_str(&serde_json::to_string(&r.to_json()).unwrap()).unwrap();
        let t = r.error_table();
        for (i, (task, cells)) in t.rows.iter().enumerate() {
            assert_eq!(parsed["error_table"][i]["task"], task.name());
            for (j, c) in cells.iter().enumerate() {
                assert_eq!(parsed["error_table"][i]["cells"][j], c.as_str());
            }
        }
        assert_eq!(parsed["columns"][0], "http:gpt-4 (1 shot)");
    }
}
