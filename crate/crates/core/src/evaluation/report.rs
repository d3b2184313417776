//! Evaluation reports and ablation tables: JSON, aligned text and CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::downstream::Downstream;
use super::experiment::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub params_hash: String,
    pub prefix_hash: String,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    /// Absent for the full pool, which does not rank.
    pub auc: Option<f64>,
    pub precision_at_k: BTreeMap<usize, f64>,
    pub budget: usize,
    pub in_domain_picked: usize,
    pub downstream: Option<Downstream>,
}

/// Headline metrics are those of the likelihood-ratio selection; `methods`
/// holds the head-to-head comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub precision_at_k: BTreeMap<usize, f64>,
    pub f1_at_tau: f64,
    pub retention: f64,
    pub downstream_ppl: Option<f64>,
    pub base_heldout_ppl: f64,
    pub forward_passes: u64,
    pub methods: Vec<MethodRow>,
    pub provenance: ReportProvenance,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodRow> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn to_table(&self) -> String {
        let ks: Vec<usize> = self.precision_at_k.keys().copied().collect();
        let mut header = vec!["method".to_string(), "auc".into()];
        header.extend(ks.iter().map(|k| format!("p@{k}")));
        header.extend(["budget", "in_domain", "heldout_ppl"].map(String::from));
        let rows = self
            .methods
            .iter()
            .map(|m| {
                let mut r = vec![m.method.clone(), opt(m.auc)];
                r.extend(ks.iter().map(|k| opt(m.precision_at_k.get(k).copied())));
                r.push(m.budget.to_string());
                r.push(m.in_domain_picked.to_string());
                r.push(opt(m.downstream.map(|d| d.ppl)));
                r
            })
            .collect::<Vec<_>>();
        let mut out = format!(
            "auc {:.4}  f1@tau {:.4}  retention {:.4}  base heldout ppl {:.4}\n\n",
            self.auc, self.f1_at_tau, self.retention, self.base_heldout_ppl
        );
        out.push_str(&aligned(&header, &rows));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,auc,budget,in_domain,heldout_nll,heldout_ppl\n");
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                m.method,
                csv_opt(m.auc),
                m.budget,
                m.in_domain_picked,
                csv_opt(m.downstream.map(|d| d.nll)),
                csv_opt(m.downstream.map(|d| d.ppl)),
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub tau: f64,
    pub retention: f64,
    pub selected: usize,
    pub f1: f64,
    pub downstream_ppl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixLengthRow {
    pub m: usize,
    pub trainable_params: usize,
    /// Mean sequence log-likelihood of the held-out reference split.
    pub heldout_log_likelihood: f64,
    pub heldout_per_token: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSizeRow {
    pub config_hash: String,
    pub d_model: usize,
    pub n_layers: usize,
    pub params: usize,
    pub auc: f64,
    pub downstream_ppl: Option<f64>,
}

/// One ablation sweep in tabular form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ablation", content = "rows", rename_all = "snake_case")]
pub enum AblationTable {
    Threshold(Vec<ThresholdRow>),
    PrefixLength(Vec<PrefixLengthRow>),
    ModelSize(Vec<ModelSizeRow>),
}

impl AblationTable {
    fn cells(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        match self {
            AblationTable::Threshold(rows) => (
                s(&["tau", "retention", "selected", "f1", "downstream_ppl"]),
                rows.iter()
                    .map(|r| {
                        vec![
                            format!("{}", r.tau),
                            num(r.retention),
                            r.selected.to_string(),
                            num(r.f1),
                            opt(r.downstream_ppl),
                        ]
                    })
                    .collect(),
            ),
            AblationTable::PrefixLength(rows) => (
                s(&["m", "trainable_params", "heldout_ll", "heldout_ll_per_token"]),
                rows.iter()
                    .map(|r| {
                        vec![
                            r.m.to_string(),
                            r.trainable_params.to_string(),
                            num(r.heldout_log_likelihood),
                            num(r.heldout_per_token),
                        ]
                    })
                    .collect(),
            ),
            AblationTable::ModelSize(rows) => (
                s(&["config_hash", "d_model", "n_layers", "params", "auc", "downstream_ppl"]),
                rows.iter()
                    .map(|r| {
                        vec![
                            r.config_hash.clone(),
                            r.d_model.to_string(),
                            r.n_layers.to_string(),
                            r.params.to_string(),
                            num(r.auc),
                            opt(r.downstream_ppl),
                        ]
                    })
                    .collect(),
            ),
        }
    }

    pub fn to_table(&self) -> String {
        let (h, rows) = self.cells();
        aligned(&h, &rows)
    }

    pub fn to_csv(&self) -> String {
        let (h, rows) = self.cells();
        let mut out = h.join(",");
        out.push('\n');
        for r in rows {
            out.push_str(&r.iter().map(|c| if c == "-" { "" } else { c }).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables always serialize")
    }
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "-".to_string())
}

fn csv_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

/// Right-aligned columns, except the first which is left-aligned.
fn aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_table_layout() {
        let t = AblationTable::Threshold(vec![
            ThresholdRow { tau: 0.9, retention: 0.5, selected: 5, f1: 0.75, downstream_ppl: None },
            ThresholdRow { tau: 1.0, retention: 0.25, selected: 2, f1: 0.5, downstream_ppl: Some(3.0) },
        ]);
        let text = t.to_table();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("tau"));
        assert!(lines[1].ends_with('-'));
        let csv = t.to_csv();
        assert_eq!(csv.lines().nth(1).unwrap(), "0.9,0.500000,5,0.750000,");
        let back: AblationTable = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }
}
