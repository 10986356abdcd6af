//! Experiment reports: JSON arrays of row objects and aligned plain text.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub params: BTreeMap<String, f64>,
    pub empirical: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theoretical: Option<f64>,
    pub trials: usize,
    /// Deterministic auxiliary values.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock measurements; machine dependent.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub timing: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    /// Meaning of the `empirical` column.
    pub empirical_label: String,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn map_value(m: &BTreeMap<String, f64>) -> Value {
    Value::Object(m.iter().map(|(k, v)| (k.clone(), finite_or_null(*v))).collect())
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, empirical_label: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            empirical_label: empirical_label.into(),
            ..Self::default()
        }
    }

    /// Row objects as a JSON array; timing is included only on request.
    pub fn to_json_value(&self, include_timing: bool) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("experiment".into(), json!(self.experiment));
                    obj.insert("params".into(), map_value(&r.params));
                    obj.insert(self.empirical_label.clone(), finite_or_null(r.empirical));
                    if let Some(t) = r.theoretical {
                        obj.insert("theoretical".into(), finite_or_null(t));
                    }
                    obj.insert("trials".into(), json!(r.trials));
                    if !r.metrics.is_empty() {
                        obj.insert("metrics".into(), map_value(&r.metrics));
                    }
                    if include_timing && !r.timing.is_empty() {
                        obj.insert("timing".into(), map_value(&r.timing));
                    }
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn to_json(&self, include_timing: bool) -> String {
        serde_json::to_string_pretty(&self.to_json_value(include_timing)).expect("report serializes")
    }

    /// Per-row parameters and wall-clock measurements only.
    pub fn timing_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| json!({ "params": map_value(&r.params), "timing": map_value(&r.timing) }))
            .collect();
        serde_json::to_string_pretty(&rows).expect("report serializes")
    }

    pub fn to_text(&self, include_timing: bool) -> String {
        let keys = |f: fn(&ReportRow) -> &BTreeMap<String, f64>| -> Vec<String> {
            let set: BTreeSet<&String> = self.rows.iter().flat_map(|r| f(r).keys()).collect();
            set.into_iter().cloned().collect()
        };
        let params = keys(|r| &r.params);
        let metrics = keys(|r| &r.metrics);
        let timing = if include_timing { keys(|r| &r.timing) } else { Vec::new() };
        let has_theory = self.rows.iter().any(|r| r.theoretical.is_some());

        let mut header: Vec<String> = params.clone();
        header.push(self.empirical_label.clone());
        if has_theory {
            header.push("theoretical".into());
        }
        header.push("trials".into());
        header.extend(metrics.iter().cloned());
        header.extend(timing.iter().cloned());

        let fmt = |v: Option<f64>| match v {
            Some(x) if x.is_finite() => format!("{x:.6}"),
            Some(_) => "nan".to_string(),
            None => "-".to_string(),
        };
        let mut table = vec![header];
        for r in &self.rows {
            let mut line: Vec<String> = params.iter().map(|k| fmt(r.params.get(k).copied())).collect();
            line.push(fmt(Some(r.empirical)));
            if has_theory {
                line.push(fmt(r.theoretical));
            }
            line.push(r.trials.to_string());
            line.extend(metrics.iter().map(|k| fmt(r.metrics.get(k).copied())));
            line.extend(timing.iter().map(|k| fmt(r.timing.get(k).copied())));
            table.push(line);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("# {}\n", self.experiment);
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:>w$}"))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        for n in &self.notes {
            out.push_str(&format!("# {n}\n"));
        }
        out
    }
}
