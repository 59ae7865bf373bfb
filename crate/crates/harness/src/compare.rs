//! Median-over-seeds summaries of metrics CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use misac_tasks::{format_sig9, metric_higher_is_better, CsvRun};

use crate::error::{HarnessError, Result};

/// Middle order statistic; for an even count, the lower of the two middle
/// values. `None` for no values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub model: String,
    pub seeds: usize,
    pub final_median: f64,
    /// First epoch at which the per-epoch median meets the threshold.
    pub epochs_to_threshold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metric_name: String,
    pub threshold: Option<f64>,
    pub rows: Vec<CompareRow>,
}

fn meets(value: f64, threshold: f64, higher_is_better: bool) -> bool {
    if higher_is_better {
        value >= threshold
    } else {
        value <= threshold
    }
}

/// Group runs by label, then report each group's median final metric and
/// epochs-to-threshold. Groups keep first-appearance order.
pub fn compare(runs: &[(String, CsvRun)], threshold: Option<f64>) -> Result<Comparison> {
    let first = runs.first().ok_or_else(|| HarnessError::Config("compare needs at least one metrics CSV".into()))?;
    let metric_name = first.1.metric_name.clone();
    if let Some((label, r)) = runs.iter().find(|(_, r)| r.metric_name != metric_name) {
        return Err(HarnessError::Config(format!("{label} reports `{}` but the first input reports `{metric_name}`", r.metric_name)));
    }
    let higher = metric_higher_is_better(&metric_name)
        .ok_or_else(|| HarnessError::Config(format!("unknown metric `{metric_name}`")))?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&CsvRun>> = BTreeMap::new();
    for (label, run) in runs {
        if run.rows.is_empty() {
            return Err(HarnessError::Config(format!("{label} has no metric rows")));
        }
        if !groups.contains_key(label) {
            order.push(label.clone());
        }
        groups.entry(label.clone()).or_default().push(run);
    }
    let rows = order
        .into_iter()
        .map(|model| {
            let group = &groups[&model];
            let finals: Vec<f64> = group.iter().map(|r| r.rows.last().unwrap().2).collect();
            let epochs = group.iter().map(|r| r.rows.len()).min().unwrap();
            let epochs_to_threshold = threshold.and_then(|t| {
                (0..epochs).find_map(|i| {
                    let at: Vec<f64> = group.iter().map(|r| r.rows[i].2).collect();
                    meets(median(&at).unwrap(), t, higher).then_some(group[0].rows[i].0)
                })
            });
            CompareRow { model, seeds: group.len(), final_median: median(&finals).unwrap(), epochs_to_threshold }
        })
        .collect();
    Ok(Comparison { metric_name, threshold, rows })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,seeds,metric_name,median_final,epochs_to_threshold\n");
        for r in &self.rows {
            let ett = r.epochs_to_threshold.map_or_else(|| "n/a".into(), |e| e.to_string());
            writeln!(out, "{},{},{},{},{ett}", r.model, r.seeds, self.metric_name, format_sig9(r.final_median)).unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut out = format!("metric: {}", self.metric_name);
        if let Some(t) = self.threshold {
            write!(out, "  threshold: {}", format_sig9(t)).unwrap();
        }
        writeln!(out, "\n{:width$}  {:>5}  {:>14}  {:>19}", "model", "seeds", "median final", "epochs to threshold").unwrap();
        for r in &self.rows {
            let ett = r.epochs_to_threshold.map_or_else(|| "n/a".into(), |e| e.to_string());
            writeln!(out, "{:width$}  {:>5}  {:>14}  {:>19}", r.model, r.seeds, format_sig9(r.final_median), ett).unwrap();
        }
        out
    }
}
