use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean errors of one action at every reported horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionErrors {
    pub action: String,
    pub errors: Vec<f64>,
    pub sequences: usize,
}

/// Where one evaluation sequence was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedWindow {
    pub action: String,
    pub subject: String,
    pub trial: String,
    pub start: usize,
}

/// Mean Euler-angle error per action and horizon, with the all-action
/// average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub horizons_ms: Vec<u32>,
    pub rows: Vec<ActionErrors>,
    pub average: Vec<f64>,
    pub seed: u64,
    pub windows: Vec<SeedWindow>,
}

pub const AVERAGE_LABEL: &str = "average";

impl HorizonReport {
    pub(crate) fn from_rows(
        horizons_ms: Vec<u32>,
        rows: Vec<ActionErrors>,
        seed: u64,
        windows: Vec<SeedWindow>,
    ) -> Self {
        let average = (0..horizons_ms.len())
            .map(|h| rows.iter().map(|r| r.errors[h]).sum::<f64>() / rows.len().max(1) as f64)
            .collect();
        HorizonReport { horizons_ms, rows, average, seed, windows }
    }

    pub fn sequences(&self) -> usize {
        self.rows.iter().map(|r| r.sequences).sum()
    }

    /// Largest absolute difference between matching entries, or infinity
    /// when the layouts differ.
    pub fn max_abs_diff(&self, other: &HorizonReport) -> f64 {
        if self.horizons_ms != other.horizons_ms || self.rows.len() != other.rows.len() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.rows.iter().zip(&other.rows) {
            if a.action != b.action || a.sequences != b.sequences {
                return f64::INFINITY;
            }
            for (x, y) in a.errors.iter().zip(&b.errors) {
                worst = worst.max((x - y).abs());
            }
        }
        for (x, y) in self.average.iter().zip(&other.average) {
            worst = worst.max((x - y).abs());
        }
        worst
    }

    /// `action,ms,error` rows, actions first and the average last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("action,ms,error\n");
        let rows = self.rows.iter().map(|r| (r.action.as_str(), &r.errors));
        for (action, errors) in rows.chain(std::iter::once((AVERAGE_LABEL, &self.average))) {
            for (ms, e) in self.horizons_ms.iter().zip(errors) {
                writeln!(out, "{action},{ms},{e}").expect("writing to a String");
            }
        }
        out
    }

    /// Aligned text table: one row per action, one column per horizon.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.action.len()).chain([AVERAGE_LABEL.len(), 9]).max().unwrap_or(9);
        let mut out = String::new();
        write!(out, "{:<width$}", "ms").expect("writing to a String");
        for ms in &self.horizons_ms {
            write!(out, " {ms:>7}").expect("writing to a String");
        }
        out.push('\n');
        let rows = self.rows.iter().map(|r| (r.action.as_str(), &r.errors));
        for (action, errors) in rows.chain(std::iter::once((AVERAGE_LABEL, &self.average))) {
            write!(out, "{action:<width$}").expect("writing to a String");
            for e in errors {
                write!(out, " {e:>7.3}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Write `<stem>.csv`, `<stem>.txt` and `<stem>.json` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (ext, body) in [("csv", self.to_csv()), ("txt", self.to_table()), ("json", self.to_json()?)] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> HorizonReport {
        let rows = vec![
            ActionErrors { action: "walking".into(), errors: vec![0.25, 0.5], sequences: 8 },
            ActionErrors { action: "eating".into(), errors: vec![0.75, 1.0], sequences: 8 },
        ];
        HorizonReport::from_rows(vec![80, 160], rows, 7, Vec::new())
    }

    #[test]
    fn average_is_mean_over_actions() {
        let r = sample();
        assert_eq!(r.average, [0.5, 0.75]);
        assert_eq!(r.sequences(), 16);
    }

    #[test]
    fn csv_layout() {
        assert_eq!(
            sample().to_csv(),
            "action,ms,error\nwalking,80,0.25\nwalking,160,0.5\neating,80,0.75\neating,160,1\naverage,80,0.5\naverage,160,0.75\n"
        );
    }

    #[test]
    fn table_columns_align() {
        let table = sample().to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(lines[1].starts_with("walking") && lines[1].ends_with("0.500"));
    }

    #[test]
    fn diff_detects_layout_change() {
        let a = sample();
        let mut b = sample();
        assert_eq!(a.max_abs_diff(&b), 0.0);
        b.rows[1].errors[0] += 0.125;
        b.average = HorizonReport::from_rows(b.horizons_ms.clone(), b.rows.clone(), 7, Vec::new()).average;
        assert_eq!(a.max_abs_diff(&b), 0.125);
        b.rows.pop();
        assert_eq!(a.max_abs_diff(&b), f64::INFINITY);
    }
}
