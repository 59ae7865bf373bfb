//! Task definitions: which modalities feed the model, what it predicts, and
//! how inputs and targets are assembled from a dataset.

use misac_chansim::{Dataset, ScenarioConfig};
use misac_core::{HeadKind, InputGroup, InputLayout, Modality, ModelInput};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BeamPrediction,
    PathlossRegression,
    ChannelRegression,
    TrajectoryTracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

pub const DEFAULT_WINDOW: usize = 4;

fn default_window() -> usize {
    DEFAULT_WINDOW
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Overrides the task's default modality set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modalities: Option<Vec<Modality>>,
    /// Past slots L in the trajectory window; ignored by the other tasks.
    #[serde(default = "default_window")]
    pub window: usize,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        Self { kind, modalities: None, window: DEFAULT_WINDOW }
    }

    pub fn with_modalities(mut self, modalities: &[Modality]) -> Self {
        self.modalities = Some(modalities.to_vec());
        self
    }

    /// Sensing streams for the per-slot tasks; trajectory tracking also reads
    /// the RF history.
    pub fn default_modalities(kind: TaskKind) -> Vec<Modality> {
        match kind {
            TaskKind::TrajectoryTracking => Modality::ALL.to_vec(),
            _ => Modality::SENSING.to_vec(),
        }
    }

    /// Input modalities in canonical order.
    pub fn input_modalities(&self) -> Vec<Modality> {
        let mut m = self.modalities.clone().unwrap_or_else(|| Self::default_modalities(self.kind));
        m.sort();
        m
    }

    /// Slots per modality stream: `L + 1` for trajectories, else 1.
    pub fn window_slots(&self) -> usize {
        match self.kind {
            TaskKind::TrajectoryTracking => self.window + 1,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.modalities.as_deref().unwrap_or(&[]);
        if self.modalities.is_some() && m.is_empty() {
            return Err(TaskError::Config("task needs at least one modality".into()));
        }
        let mut sorted = m.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != m.len() {
            return Err(TaskError::Config(format!("duplicate modalities in {m:?}")));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<InputLayout> {
        Ok(InputLayout::new(&self.input_modalities(), self.window_slots())?)
    }

    pub fn loss(&self) -> LossKind {
        match self.kind {
            TaskKind::BeamPrediction => LossKind::CrossEntropy,
            _ => LossKind::Mse,
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self.kind {
            TaskKind::BeamPrediction => "top1_accuracy",
            TaskKind::PathlossRegression | TaskKind::ChannelRegression => "nmse_db",
            TaskKind::TrajectoryTracking => "mean_euclidean_error_m",
        }
    }

    /// Larger metric values are better only for accuracy.
    pub fn higher_is_better(&self) -> bool {
        self.kind == TaskKind::BeamPrediction
    }

    pub fn head(&self, scenario: &ScenarioConfig) -> HeadKind {
        match self.kind {
            TaskKind::BeamPrediction => HeadKind::Classification { classes: scenario.codebook_size },
            TaskKind::PathlossRegression => HeadKind::Regression { outputs: 1 },
            TaskKind::ChannelRegression => HeadKind::Regression { outputs: 2 * scenario.antennas },
            TaskKind::TrajectoryTracking => HeadKind::Regression { outputs: 3 },
        }
    }
}

/// Training targets for every slot. Regression targets are z-scored with the
/// manifest's training-split statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values { width: usize, values: Vec<f64> },
}

impl Targets {
    pub fn of(dataset: &Dataset, task: &TaskSpec) -> Self {
        let n = &dataset.manifest.normalization;
        let records = &dataset.records;
        match task.kind {
            TaskKind::BeamPrediction => Targets::Classes(records.iter().map(|r| r.beam_label as usize).collect()),
            TaskKind::PathlossRegression => Targets::Values {
                width: 1,
                values: records.iter().flat_map(|r| n.path_loss_db.normalize(&[r.path_loss_db])).collect(),
            },
            TaskKind::ChannelRegression => Targets::Values {
                width: n.channel.width(),
                values: records.iter().flat_map(|r| n.channel.normalize(&r.channel_reals())).collect(),
            },
            TaskKind::TrajectoryTracking => Targets::Values {
                width: 3,
                values: records.iter().flat_map(|r| n.position.normalize(&r.position)).collect(),
            },
        }
    }

    pub fn classes(&self, idx: &[usize]) -> Vec<usize> {
        match self {
            Targets::Classes(c) => idx.iter().map(|&i| c[i]).collect(),
            Targets::Values { .. } => Vec::new(),
        }
    }

    pub fn values(&self, idx: &[usize]) -> Vec<f64> {
        match self {
            Targets::Values { width, values } => idx.iter().flat_map(|&i| &values[i * width..(i + 1) * width]).copied().collect(),
            Targets::Classes(_) => Vec::new(),
        }
    }
}

/// Normalized input rows for every slot, assembled once per layout.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTable {
    rows: usize,
    groups: Vec<InputGroup<f64>>,
}

impl InputTable {
    /// Each modality stream holds `window` consecutive slots, oldest first;
    /// slots before the start repeat slot 0.
    pub fn new(dataset: &Dataset, layout: &InputLayout, window: usize) -> Result<Self> {
        let stats = &dataset.manifest.normalization.features;
        let normalized: Vec<Vec<f64>> = dataset.records.iter().map(|r| stats.normalize(&r.features)).collect();
        let rows = normalized.len();
        let mut groups = Vec::new();
        for (m, width) in layout.groups.iter().copied() {
            if width != m.width() * window {
                return Err(TaskError::Config(format!(
                    "layout gives {m} width {width}, expected {} x {window} window slots",
                    m.width()
                )));
            }
            let mut values = Vec::with_capacity(rows * width);
            for t in 0..rows {
                for k in 0..window {
                    let s = (t + k + 1).saturating_sub(window);
                    values.extend_from_slice(&normalized[s][m.offset()..m.offset() + m.width()]);
                }
            }
            groups.push(InputGroup { modality: m, width, values });
        }
        Ok(Self { rows, groups })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Gather the rows `idx` into a model input.
    pub fn batch(&self, idx: &[usize]) -> Result<ModelInput<f64>> {
        let groups = self
            .groups
            .iter()
            .map(|g| InputGroup {
                modality: g.modality,
                width: g.width,
                values: idx.iter().flat_map(|&i| &g.values[i * g.width..(i + 1) * g.width]).copied().collect(),
            })
            .collect();
        Ok(ModelInput::new(idx.len(), groups)?)
    }
}

/// Model input for the slots `idx`, normalized per the manifest.
pub fn assemble_input(dataset: &Dataset, idx: &[usize], layout: &InputLayout, task: &TaskSpec) -> Result<ModelInput<f64>> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= dataset.len()) {
        return Err(TaskError::Config(format!("slot {bad} outside a dataset of {}", dataset.len())));
    }
    InputTable::new(dataset, layout, task.window_slots())?.batch(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use misac_chansim::generate_dataset;

    fn dataset() -> Dataset {
        let c = ScenarioConfig { slots: 40, antennas: 4, codebook_size: 8, ..Default::default() };
        generate_dataset(&c, 0.7).unwrap()
    }

    #[test]
    fn beam_task_reads_four_sensing_streams() {
        let d = dataset();
        let task = TaskSpec::new(TaskKind::BeamPrediction);
        let x = assemble_input(&d, &[0, 5], &task.layout().unwrap(), &task).unwrap();
        let m: Vec<Modality> = x.groups.iter().map(|g| g.modality).collect();
        assert_eq!(m, Modality::SENSING.to_vec());
        assert!(x.group(Modality::RfHistory).is_none());
    }

    #[test]
    fn trajectory_streams_hold_the_window() {
        let d = dataset();
        let task = TaskSpec::new(TaskKind::TrajectoryTracking);
        let layout = task.layout().unwrap();
        let x = assemble_input(&d, &[10], &layout, &task).unwrap();
        for g in &x.groups {
            assert_eq!(g.width, 5 * g.modality.width());
        }
        // Newest slot last, oldest first.
        let stats = &d.manifest.normalization.features;
        let p = x.group(Modality::Position).unwrap();
        let z6 = stats.normalize(&d.records[6].features);
        let z10 = stats.normalize(&d.records[10].features);
        let off = Modality::Position.offset();
        assert_eq!(&p.values[..6], &z6[off..off + 6]);
        assert_eq!(&p.values[24..30], &z10[off..off + 6]);
    }

    #[test]
    fn early_slots_repeat_the_first() {
        let d = dataset();
        let task = TaskSpec::new(TaskKind::TrajectoryTracking).with_modalities(&[Modality::Radar]);
        let x = assemble_input(&d, &[1], &task.layout().unwrap(), &task).unwrap();
        let g = &x.groups[0].values;
        assert_eq!(&g[0..8], &g[8..16]);
        assert_eq!(&g[0..8], &g[16..24]);
        assert_eq!(&g[0..8], &g[24..32]);
        assert_ne!(&g[24..32], &g[32..40]);
    }

    #[test]
    fn assembly_is_deterministic() {
        let d = dataset();
        let task = TaskSpec::new(TaskKind::PathlossRegression);
        let layout = task.layout().unwrap();
        assert_eq!(assemble_input(&d, &[3, 7], &layout, &task).unwrap(), assemble_input(&d, &[3, 7], &layout, &task).unwrap());
    }

    #[test]
    fn out_of_range_slot_is_a_config_error() {
        let d = dataset();
        let task = TaskSpec::new(TaskKind::PathlossRegression);
        assert!(matches!(assemble_input(&d, &[40], &task.layout().unwrap(), &task), Err(TaskError::Config(_))));
    }

    #[test]
    fn duplicate_or_empty_modalities_are_rejected() {
        let t = TaskSpec::new(TaskKind::BeamPrediction).with_modalities(&[Modality::Vision, Modality::Vision]);
        assert!(t.validate().is_err());
        assert!(TaskSpec::new(TaskKind::BeamPrediction).with_modalities(&[]).validate().is_err());
        let json = r#"{"kind":"beam_prediction","windw":3}"#;
        assert!(serde_json::from_str::<TaskSpec>(json).is_err());
    }

    #[test]
    fn regression_targets_are_z_scored() {
        let d = dataset();
        let t = Targets::of(&d, &TaskSpec::new(TaskKind::TrajectoryTracking));
        let train = &d.manifest.split.train;
        let v = t.values(train);
        let mean_x = v.chunks(3).map(|c| c[0]).sum::<f64>() / train.len() as f64;
        assert!(mean_x.abs() < 1e-9);
        let ch = Targets::of(&d, &TaskSpec::new(TaskKind::ChannelRegression));
        assert!(matches!(ch, Targets::Values { width: 8, .. }));
    }
}
