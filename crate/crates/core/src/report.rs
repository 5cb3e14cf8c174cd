//! Evaluation output: a JSON document, a plain-text table and CSV curves.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub metrics: BTreeMap<String, f64>,
    /// Named curves as `(x, y)` point lists.
    pub curves: BTreeMap<String, Curve>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            ..Default::default()
        }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.metrics.insert(name.into(), value);
        self
    }

    pub fn curve(
        &mut self,
        name: impl Into<String>,
        x_label: &str,
        y_label: &str,
        points: Vec<(f64, f64)>,
    ) -> &mut Self {
        self.curves.insert(
            name.into(),
            Curve {
                x_label: x_label.into(),
                y_label: y_label.into(),
                points,
            },
        );
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two-column metric table; fractions are not rescaled.
    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .metrics
            .iter()
            .map(|(k, v)| vec![k.clone(), format!("{v:.6}")])
            .collect();
        render_table(&self.title, &["metric", "value"], &rows)
    }
}

impl Curve {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.x_label, self.y_label);
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

/// Fixed-width text table with a rule under the header.
pub fn render_table(title: &str, headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (k, cell) in row.iter().enumerate().take(cols) {
            widths[k] = widths[k].max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k == 0 {
                    format!("{c:<w$}", w = widths[k])
                } else {
                    format!("{c:>w$}", w = widths[k])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = String::new();
    if !title.is_empty() {
        out.push_str(title);
        out.push('\n');
    }
    let header = line(headers.to_vec());
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// `0.9953` → `"99.53"`
pub fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_and_csv() {
        let mut r = Report::new("verification");
        r.metric("eer", 0.0125)
            .curve("roc", "far", "tpr", vec![(0.0, 0.5), (1.0, 1.0)]);
        let table = r.to_table();
        assert!(table.starts_with("verification\nmetric"));
        assert!(table.contains("eer     0.012500"));
        assert_eq!(r.curves["roc"].to_csv(), "far,tpr\n0,0.5\n1,1\n");
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn percent_format() {
        assert_eq!(percent(0.99353), "99.35");
    }
}
