//! Comparison tables over evaluation summaries.

use std::fmt::Write as _;

use thiserror::Error;

use crate::metrics::Summary;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("report needs at least one summary")]
    Empty,
    #[error("{labels} labels for {summaries} summaries")]
    LabelCount { labels: usize, summaries: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub summary: Summary,
    /// Best-in-column flags for J&F, J, F.
    pub best: [bool; 3],
}

/// One row per run with columns J&F, J, F shown as percentages; the best
/// value of each column is marked with `*` (all tied rows are marked).
#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

fn columns(s: &Summary) -> [f64; 3] {
    [s.jf, s.j, s.f]
}

pub fn build_report(summaries: &[Summary], labels: &[String]) -> Result<ReportTable, ReportError> {
    if labels.len() != summaries.len() {
        return Err(ReportError::LabelCount {
            labels: labels.len(),
            summaries: summaries.len(),
        });
    }
    if summaries.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut best = [f64::NEG_INFINITY; 3];
    for s in summaries {
        for (b, v) in best.iter_mut().zip(columns(s)) {
            *b = b.max(v);
        }
    }
    let rows = summaries
        .iter()
        .zip(labels)
        .map(|(s, label)| {
            let vals = columns(s);
            ReportRow {
                label: label.clone(),
                summary: *s,
                best: [vals[0] == best[0], vals[1] == best[1], vals[2] == best[2]],
            }
        })
        .collect();
    Ok(ReportTable { rows })
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl ReportTable {
    pub fn to_text(&self) -> String {
        let label_w = self
            .rows
            .iter()
            .map(|r| r.label.chars().count())
            .max()
            .unwrap_or(0)
            .max(3);
        let mut out = String::new();
        writeln!(out, "{:<label_w$}  {:>7}  {:>7}  {:>7}", "Run", "J&F", "J", "F").unwrap();
        for row in &self.rows {
            write!(out, "{:<label_w$}", row.label).unwrap();
            for (v, best) in columns(&row.summary).into_iter().zip(row.best) {
                let cell = if best {
                    format!("{}*", pct(v))
                } else {
                    format!("{} ", pct(v))
                };
                write!(out, "  {cell:>7}").unwrap();
            }
            out = out.trim_end().to_string();
            out.push('\n');
        }
        out
    }

    /// `label,J&F,J,F,best_J&F,best_J,best_F`, percentages with two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,J&F,J,F,best_J&F,best_J,best_F\n");
        for row in &self.rows {
            let [a, b, c] = columns(&row.summary).map(pct);
            let [x, y, z] = row.best;
            writeln!(out, "{},{a},{b},{c},{x},{y},{z}", row.label.replace(',', ";")).unwrap();
        }
        out
    }
}
