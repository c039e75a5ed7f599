use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One source row; `acc` and `ap` are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source: String,
    pub n_real: usize,
    pub n_fake: usize,
    pub acc: Option<f64>,
    pub ap: Option<f64>,
    /// Why the row was excluded from the mean, if it was.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub invalid: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub acc: f64,
    pub ap: f64,
}

/// Provenance recorded with the JSON form of a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_sha256: Option<String>,
    pub corpus_manifest_sha256: Option<String>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub mean: Option<MeanRow>,
    #[serde(default)]
    pub provenance: Provenance,
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "invalid".into(), |x| format!("{x:.2}"))
}

impl EvalReport {
    /// Builds the report and its unweighted mean over valid rows.
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        let valid: Vec<&ReportRow> = rows.iter().filter(|r| r.invalid.is_none()).collect();
        let mean = (!valid.is_empty()).then(|| {
            let n = valid.len() as f64;
            MeanRow {
                acc: valid.iter().filter_map(|r| r.acc).sum::<f64>() / n,
                ap: valid.iter().filter_map(|r| r.ap).sum::<f64>() / n,
            }
        });
        Self {
            rows,
            mean,
            provenance: Provenance::default(),
        }
    }

    pub fn row(&self, source: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.source == source)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("Source,N_real,N_fake,Acc,AP\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.source,
                r.n_real,
                r.n_fake,
                fmt_pct(r.acc),
                fmt_pct(r.ap)
            );
        }
        if let Some(m) = self.mean {
            let _ = writeln!(out, "Mean,,,{:.2},{:.2}", m.acc, m.ap);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.source.len())
            .chain([6])
            .max()
            .unwrap_or(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>7}  {:>7}",
            "Source", "N_real", "N_fake", "Acc", "AP"
        );
        let _ = writeln!(out, "{}", "-".repeat(width + 34));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>6}  {:>7}  {:>7}",
                r.source,
                r.n_real,
                r.n_fake,
                fmt_pct(r.acc),
                fmt_pct(r.ap)
            );
        }
        if let Some(m) = self.mean {
            let _ = writeln!(out, "{}", "-".repeat(width + 34));
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>6}  {:>7.2}  {:>7.2}",
                "Mean", "", "", m.acc, m.ap
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
