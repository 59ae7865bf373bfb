//! Gating mass conditioned on modality reliability.

use misac_core::{AnyModel, FusionModel, Modality};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskError};
use crate::training::{evaluate, TaskData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptivityRow {
    pub modality: Modality,
    /// Mean summed gate mass on this modality's experts over clean slots.
    pub clean: Option<f64>,
    /// Same over slots where this modality is corrupted; `None` when there
    /// are none.
    pub corrupted: Option<f64>,
    pub clean_slots: usize,
    pub corrupted_slots: usize,
}

/// Per-modality gate mass split by the slot's reliability flag. Flags are
/// read from the dataset here and never reach the model.
pub fn evaluate_gating_adaptivity(model: &AnyModel<f64>, data: &TaskData<'_>, idx: &[usize]) -> Result<Vec<AdaptivityRow>> {
    let eval = evaluate(model, data, idx)?;
    let rows = eval.row_mass.ok_or_else(|| TaskError::Config(format!("{} has no gating network", model.kind_name())))?;
    let records = &data.dataset.records;
    let mut out = Vec::new();
    for m in model.layout().modalities() {
        let (mut sum, mut n) = ([0.0; 2], [0usize; 2]);
        for (&i, mass) in idx.iter().zip(&rows) {
            let k = usize::from(!records[i].reliability[m.index()]);
            sum[k] += mass[m.index()];
            n[k] += 1;
        }
        let mean = |k: usize| (n[k] > 0).then(|| sum[k] / n[k] as f64);
        out.push(AdaptivityRow { modality: m, clean: mean(0), corrupted: mean(1), clean_slots: n[0], corrupted_slots: n[1] });
    }
    Ok(out)
}
