//! Directional reproduction suite: multi-seed trainings at desk scale and the
//! orderings they are expected to show.
//!
//! Every run goes through [`train_seed`] with resume enabled, so a suite
//! pointed at an existing directory only finishes what is missing. A run
//! whose configuration changed is refused by its checkpoint hash.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use misac_chansim::{Dataset, ScenarioConfig};
use misac_core::{ArchConfig, Modality, ModelSpec};
use misac_tasks::{evaluate, evaluate_gating_adaptivity, TaskData, TaskKind, TaskSpec, TrainConfig, TrainState};

use crate::compare::median;
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::run::{gen_data, load_dataset, train_seed, TrainOptions};
use crate::selftest::CriterionResult;

pub const DIRECTIONAL_IDS: [u32; 6] = [7, 8, 9, 10, 11, 12];

/// Sparse routing for the efficiency comparison: 5 of 15 experts.
const SPARSE_ACTIVE: usize = 5;
/// Unimodal baselines competing for "best unimodal".
const UNIMODAL: [Modality; 2] = [Modality::Vision, Modality::Lidar];
/// Order in which modalities are added for the diminishing-returns probe.
const MODALITY_ORDER: [Modality; 5] = Modality::ALL;

const BEAM_MARGIN: f64 = 0.05;
const SPARSE_TOLERANCE: f64 = 0.03;
const NMSE_GAP_DB: f64 = 0.5;
const ADAPTIVITY_GAP: f64 = 0.02;

/// Shared settings of every run in the suite.
#[derive(Debug, Clone)]
pub struct SuiteSettings {
    pub root: PathBuf,
    pub seeds: Vec<u64>,
    pub scenario: ScenarioConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl SuiteSettings {
    /// Desk-scale defaults: default scenario (4096 slots), default
    /// architecture and schedule, seeds 0 to 4.
    pub fn desk_scale(root: PathBuf) -> Self {
        Self {
            root,
            seeds: (0..5).collect(),
            scenario: ScenarioConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Per-seed final states of one configuration, in seed order.
pub struct SeedRuns {
    pub seeds: Vec<u64>,
    pub states: Vec<TrainState>,
}

impl SeedRuns {
    pub fn finals(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.metrics.last().map_or(f64::NAN, |r| r.metric_value)).collect()
    }

    pub fn median_final(&self) -> f64 {
        median(&self.finals()).unwrap_or(f64::NAN)
    }
}

pub struct DirectionalSuite {
    settings: SuiteSettings,
    dataset: Option<Dataset>,
    runs: BTreeMap<String, SeedRuns>,
    log: Box<dyn FnMut(&str)>,
}

fn task(kind: TaskKind, modalities: &[Modality]) -> TaskSpec {
    TaskSpec::new(kind).with_modalities(modalities)
}

fn label(spec: &ModelSpec) -> String {
    match spec {
        ModelSpec::MoeDense => "moe_dense".into(),
        ModelSpec::MoeSparse { active, .. } => format!("moe_sparse{active}"),
        ModelSpec::Concat => "concat".into(),
        ModelSpec::StaticWeighted { .. } => "static_weighted".into(),
        ModelSpec::Unimodal { modality } => format!("unimodal_{modality}"),
    }
}

fn fmt_pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn fmt_list(xs: &[f64], f: impl Fn(f64) -> String) -> String {
    xs.iter().map(|&x| f(x)).collect::<Vec<_>>().join(" ")
}

impl DirectionalSuite {
    pub fn new(settings: SuiteSettings, log: Box<dyn FnMut(&str)>) -> Self {
        Self { settings, dataset: None, runs: BTreeMap::new(), log }
    }

    fn experiment(&self, name: &str, task: TaskSpec, model: ModelSpec) -> ExperimentConfig {
        let s = &self.settings;
        ExperimentConfig {
            seeds: s.seeds.clone(),
            output_dir: s.root.join(name),
            dataset_dir: Some(s.root.join("dataset")),
            scenario: s.scenario.clone(),
            task,
            model,
            arch: s.arch.clone(),
            train: s.train.clone(),
        }
    }

    fn dataset(&mut self, config: &ExperimentConfig) -> Result<&Dataset> {
        if self.dataset.is_none() {
            let dir = config.dataset_dir();
            let hash = config.dataset_hash();
            let loaded = match load_dataset(&dir, &hash) {
                Ok(d) => d,
                Err(_) => {
                    (self.log)(&format!("generating dataset in {}", dir.display()));
                    gen_data(config, None)?;
                    load_dataset(&dir, &hash)?
                }
            };
            self.dataset = Some(loaded);
        }
        Ok(self.dataset.as_ref().expect("dataset just loaded"))
    }

    /// Train (or finish) every seed of one configuration.
    pub fn runs(&mut self, name: &str, task: TaskSpec, model: ModelSpec) -> Result<&SeedRuns> {
        if !self.runs.contains_key(name) {
            let config = self.experiment(name, task, model);
            self.dataset(&config)?;
            let dataset = self.dataset.take().expect("dataset loaded");
            let mut states = Vec::new();
            let outcome = (|| -> Result<()> {
                for &seed in &config.seeds {
                    let start = Instant::now();
                    let state = train_seed(&config, &dataset, seed, TrainOptions { resume: true, stop_after: None }, &mut |_, _| {})?;
                    let last = state.metrics.last().map_or(f64::NAN, |r| r.metric_value);
                    (self.log)(&format!("{name} seed {seed}: final {} = {last:.4} ({:.0} s)", state.metrics.metric_name, start.elapsed().as_secs_f64()));
                    states.push(state);
                }
                Ok(())
            })();
            self.dataset = Some(dataset);
            outcome?;
            self.runs.insert(name.to_string(), SeedRuns { seeds: config.seeds.clone(), states });
        }
        Ok(&self.runs[name])
    }

    fn model_runs(&mut self, kind: TaskKind, modalities: &[Modality], spec: ModelSpec) -> Result<&SeedRuns> {
        let task_name = match kind {
            TaskKind::BeamPrediction => "beam",
            TaskKind::PathlossRegression => "pathloss",
            TaskKind::ChannelRegression => "channel",
            TaskKind::TrajectoryTracking => "trajectory",
        };
        let mods: Vec<&str> = modalities.iter().map(|m| m.name()).collect();
        let name = if modalities == Modality::ALL { format!("{task_name}-{}", label(&spec)) } else { format!("{task_name}-{}-{}", label(&spec), mods.join("+")) };
        self.runs(&name, task(kind, modalities), spec)
    }

    fn beam(&mut self, spec: ModelSpec) -> Result<&SeedRuns> {
        self.model_runs(TaskKind::BeamPrediction, &Modality::ALL, spec)
    }

    /// Best unimodal baseline by median final metric.
    fn best_unimodal(&mut self, kind: TaskKind, higher_is_better: bool) -> Result<(Modality, f64)> {
        let mut best: Option<(Modality, f64)> = None;
        for m in UNIMODAL {
            let v = self.model_runs(kind, &Modality::ALL, ModelSpec::Unimodal { modality: m })?.median_final();
            let better = best.is_none_or(|(_, b)| if higher_is_better { v > b } else { v < b });
            if better {
                best = Some((m, v));
            }
        }
        Ok(best.expect("at least one unimodal baseline"))
    }

    pub fn run(&mut self, id: u32) -> Option<CriterionResult> {
        let (title, outcome) = match id {
            7 => ("beam prediction ordering", self.beam_ordering()),
            8 => ("sparse efficiency", self.sparse_efficiency()),
            9 => ("path-loss NMSE ordering", self.pathloss_ordering()),
            10 => ("trajectory tracking", self.trajectory_tracking()),
            11 => ("gating adaptivity", self.gating_adaptivity()),
            12 => ("diminishing returns", self.diminishing_returns()),
            _ => return None,
        };
        Some(match outcome {
            Ok((passed, detail)) => CriterionResult { id, title, passed, detail },
            Err(e) => CriterionResult { id, title, passed: false, detail: format!("error: {e}") },
        })
    }

    fn beam_ordering(&mut self) -> Result<(bool, String)> {
        let dense = self.beam(ModelSpec::MoeDense)?.median_final();
        let concat = self.beam(ModelSpec::Concat)?.median_final();
        let (uni, best) = self.best_unimodal(TaskKind::BeamPrediction, true)?;
        let passed = dense >= concat && concat >= best && dense - best >= BEAM_MARGIN;
        Ok((
            passed,
            format!(
                "median top-1: dense {}, concat {}, best unimodal ({uni}) {}; need dense >= concat >= unimodal and a {} margin",
                fmt_pct(dense),
                fmt_pct(concat),
                fmt_pct(best),
                fmt_pct(BEAM_MARGIN)
            ),
        ))
    }

    /// Expert evaluations per test sample of each seed's final model.
    fn evaluations_per_sample(&mut self, spec: ModelSpec) -> Result<Vec<f64>> {
        let t = task(TaskKind::BeamPrediction, &Modality::ALL);
        let states: Vec<_> = self.beam(spec)?.states.iter().map(|s| s.model.clone()).collect();
        let dataset = self.dataset.as_ref().expect("dataset loaded by the runs");
        states
            .iter()
            .map(|model| {
                let data = TaskData::new(dataset, &t, model)?;
                let eval = evaluate(model, &data, data.test_indices())?;
                Ok(eval.expert_evaluations as f64 / data.test_indices().len() as f64)
            })
            .collect()
    }

    fn sparse_efficiency(&mut self) -> Result<(bool, String)> {
        let sparse_spec = ModelSpec::MoeSparse { active: SPARSE_ACTIVE, epsilon: misac_core::moe::DEFAULT_EPSILON };
        let dense = self.beam(ModelSpec::MoeDense)?.median_final();
        let sparse = self.beam(sparse_spec.clone())?.median_final();
        let per_sparse = self.evaluations_per_sample(sparse_spec)?;
        let per_dense = self.evaluations_per_sample(ModelSpec::MoeDense)?;
        let total = self.settings.arch.experts_per_modality * Modality::COUNT;
        let counts_ok = per_sparse.iter().all(|&e| e == SPARSE_ACTIVE as f64) && per_dense.iter().all(|&e| e == total as f64);
        let passed = (dense - sparse).abs() <= SPARSE_TOLERANCE && counts_ok;
        Ok((
            passed,
            format!(
                "median top-1: sparse {} vs dense {} (gap {} pp, tolerance {} pp); evaluations per sample sparse {} dense {}",
                fmt_pct(sparse),
                fmt_pct(dense),
                format_args!("{:.2}", 100.0 * (dense - sparse)),
                100.0 * SPARSE_TOLERANCE,
                fmt_list(&per_sparse, |x| format!("{x}")),
                fmt_list(&per_dense, |x| format!("{x}")),
            ),
        ))
    }

    fn pathloss_ordering(&mut self) -> Result<(bool, String)> {
        let kind = TaskKind::PathlossRegression;
        let dense = self.model_runs(kind, &Modality::ALL, ModelSpec::MoeDense)?.median_final();
        let concat = self.model_runs(kind, &Modality::ALL, ModelSpec::Concat)?.median_final();
        let (uni, best) = self.best_unimodal(kind, false)?;
        let passed = concat - dense >= NMSE_GAP_DB && best - concat >= NMSE_GAP_DB;
        Ok((
            passed,
            format!(
                "median NMSE: dense {dense:.2} dB, concat {concat:.2} dB, best unimodal ({uni}) {best:.2} dB; gaps {:.2} and {:.2} dB, need >= {NMSE_GAP_DB}",
                concat - dense,
                best - concat
            ),
        ))
    }

    fn trajectory_tracking(&mut self) -> Result<(bool, String)> {
        let kind = TaskKind::TrajectoryTracking;
        let dense = self.model_runs(kind, &Modality::ALL, ModelSpec::MoeDense)?.median_final();
        let concat = self.model_runs(kind, &Modality::ALL, ModelSpec::Concat)?.median_final();
        let bound = 0.5 * self.settings.scenario.noise.position_m;
        let passed = dense <= concat && dense <= bound;
        Ok((passed, format!("median mean Euclidean error: dense {dense:.2} m, concat {concat:.2} m, bound 0.5 sigma_pos = {bound:.2} m")))
    }

    fn gating_adaptivity(&mut self) -> Result<(bool, String)> {
        let t = task(TaskKind::BeamPrediction, &Modality::ALL);
        let models: Vec<_> = self.beam(ModelSpec::MoeDense)?.states.iter().map(|s| s.model.clone()).collect();
        let dataset = self.dataset.as_ref().expect("dataset loaded by the runs");
        let mut gaps = Vec::new();
        for model in &models {
            let data = TaskData::new(dataset, &t, model)?;
            let rows = evaluate_gating_adaptivity(model, &data, data.test_indices())?;
            let vision = rows.iter().find(|r| r.modality == Modality::Vision).ok_or_else(|| HarnessError::Runtime("no vision row".into()))?;
            match (vision.clean, vision.corrupted) {
                (Some(c), Some(k)) => gaps.push(c - k),
                _ => return Err(HarnessError::Runtime("vision is never corrupted in the test split".into())),
            }
        }
        let positive = gaps.iter().filter(|&&g| g > 0.0).count();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let passed = positive == gaps.len() && mean > ADAPTIVITY_GAP;
        Ok((
            passed,
            format!(
                "vision mass clean minus corrupted per seed: {}; positive on {positive}/{}, mean {mean:.4} (need > {ADAPTIVITY_GAP})",
                fmt_list(&gaps, |g| format!("{g:.4}")),
                gaps.len()
            ),
        ))
    }

    fn diminishing_returns(&mut self) -> Result<(bool, String)> {
        let mut per_count: Vec<Vec<f64>> = Vec::new();
        for k in 1..=MODALITY_ORDER.len() {
            let runs = self.model_runs(TaskKind::BeamPrediction, &MODALITY_ORDER[..k], ModelSpec::MoeDense)?;
            per_count.push(runs.finals());
        }
        let medians: Vec<f64> = per_count.iter().map(|v| median(v).unwrap_or(f64::NAN)).collect();
        let nondecreasing = medians.windows(2).all(|w| w[1] >= w[0]);
        let seeds = per_count[0].len();
        let diminishing = (0..seeds).filter(|&s| per_count[4][s] - per_count[3][s] <= per_count[1][s] - per_count[0][s]).count();
        let needed = seeds.saturating_sub(1).max(1);
        let passed = nondecreasing && diminishing >= needed;
        Ok((
            passed,
            format!(
                "median top-1 for 1..5 modalities: {}; nondecreasing: {nondecreasing}; (4->5) gain <= (1->2) gain on {diminishing}/{seeds} seeds (need {needed})",
                fmt_list(&medians, fmt_pct)
            ),
        ))
    }
}
