//! Per-epoch run metrics and their CSV form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use misac_core::Modality;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskError};

pub const CSV_HEADER: &str =
    "epoch,train_loss,metric_name,metric_value,gate_mass_vision,gate_mass_radar,gate_mass_lidar,gate_mass_position,gate_mass_rf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub metric_value: f64,
    /// Mean fusion mass per modality over the test set; `None` for
    /// concatenation, which has no fusion weights.
    pub gate_mass: Option<[f64; Modality::COUNT]>,
    /// Test-set rows routed to each expert (MoE only).
    #[serde(default)]
    pub expert_activations: Vec<u64>,
    #[serde(default)]
    pub secondary: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config_hash: String,
    pub model_kind: String,
    pub metric_name: String,
    pub rows: Vec<EpochMetrics>,
}

/// `x` with 9 significant digits, in the shortest of fixed or scientific
/// notation, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let (mantissa, e) = sci.split_once('e').unwrap();
        let m = if mantissa.contains('.') { mantissa.trim_end_matches('0').trim_end_matches('.') } else { mantissa };
        format!("{m}e{e}")
    }
}

/// Direction of a metric by name; `None` for names this crate never writes.
pub fn metric_higher_is_better(name: &str) -> Option<bool> {
    match name {
        "top1_accuracy" => Some(true),
        "nmse_db" | "mean_euclidean_error_m" => Some(false),
        _ => None,
    }
}

fn parse_field(s: &str) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| TaskError::Config(format!("bad numeric CSV field `{s}`"))),
    }
}

impl RunMetrics {
    pub fn new(config_hash: impl Into<String>, model_kind: impl Into<String>, metric_name: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), model_kind: model_kind.into(), metric_name: metric_name.into(), rows: Vec::new() }
    }

    pub fn last(&self) -> Option<&EpochMetrics> {
        self.rows.last()
    }

    pub fn csv_row(&self, r: &EpochMetrics) -> String {
        let mut line = format!("{},{},{},{}", r.epoch, format_sig9(r.train_loss), self.metric_name, format_sig9(r.metric_value));
        for m in Modality::ALL {
            let v = r.gate_mass.map_or(f64::NAN, |g| g[m.index()]);
            write!(line, ",{}", format_sig9(v)).unwrap();
        }
        line
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_hash={}\n# model_kind={}\n{CSV_HEADER}\n", self.config_hash, self.model_kind);
        for r in &self.rows {
            out.push_str(&self.csv_row(r));
            out.push('\n');
        }
        out
    }
}

/// A metrics CSV as read back from disk (9-digit values).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRun {
    pub config_hash: Option<String>,
    pub model_kind: Option<String>,
    pub metric_name: String,
    /// `(epoch, train_loss, metric_value, gate masses)`
    pub rows: Vec<(usize, f64, f64, [f64; Modality::COUNT])>,
}

pub fn parse_csv(text: &str) -> Result<CsvRun> {
    let mut config_hash = None;
    let mut model_kind = None;
    let mut header_seen = false;
    let mut metric_name: Option<String> = None;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once('=') {
                match k.trim() {
                    "config_hash" => config_hash = Some(v.trim().to_string()),
                    "model_kind" => model_kind = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            continue;
        }
        if !header_seen {
            if line != CSV_HEADER {
                return Err(TaskError::Config(format!("line {}: unexpected CSV header `{line}`", n + 1)));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(TaskError::Config(format!("line {}: expected 9 fields, got {}", n + 1, f.len())));
        }
        match &metric_name {
            Some(m) if m != f[2] => {
                return Err(TaskError::Config(format!("line {}: metric `{}` differs from `{m}`", n + 1, f[2])));
            }
            None => metric_name = Some(f[2].to_string()),
            _ => {}
        }
        let epoch = f[0].parse().map_err(|_| TaskError::Config(format!("line {}: bad epoch `{}`", n + 1, f[0])))?;
        let mut mass = [0.0; Modality::COUNT];
        for (i, m) in mass.iter_mut().enumerate() {
            *m = parse_field(f[4 + i])?;
        }
        rows.push((epoch, parse_field(f[1])?, parse_field(f[3])?, mass));
    }
    if !header_seen {
        return Err(TaskError::Config("metrics CSV has no header".into()));
    }
    let metric_name = metric_name.ok_or_else(|| TaskError::Config("metrics CSV has no rows".into()))?;
    Ok(CsvRun { config_hash, model_kind, metric_name, rows })
}
