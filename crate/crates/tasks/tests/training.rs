use misac_chansim::{generate_dataset, Dataset, ScenarioConfig};
use misac_core::{AnyModel, ArchConfig, FusionModel, HasParams, Modality, ModelSpec, Tape};
use misac_tasks::checkpoint::{decode_checkpoint, encode_checkpoint};
use misac_tasks::*;

fn dataset(slots: usize) -> Dataset {
    let c = ScenarioConfig { slots, antennas: 8, codebook_size: 8, ..Default::default() };
    generate_dataset(&c, 0.7).unwrap()
}

fn arch() -> ArchConfig {
    ArchConfig { z_dim: 8, h_expert: 16, h_head: 16, gate_hidden: 16, experts_per_modality: 3 }
}

fn beam_task() -> TaskSpec {
    TaskSpec::new(TaskKind::BeamPrediction).with_modalities(&Modality::ALL)
}

fn cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { epochs, seed, batch_size: 32, ..Default::default() }
}

fn params_of(m: &AnyModel<f64>) -> Vec<f64> {
    m.params().tensors().iter().flat_map(|t| t.values().to_vec()).collect()
}

fn run(d: &Dataset, spec: &ModelSpec, task: &TaskSpec, c: &TrainConfig) -> TrainState {
    let model = build_model(spec, &arch(), task, d, c.seed).unwrap();
    run_training(d, task, model, c, "test").unwrap()
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let d = dataset(200);
    let task = beam_task();
    let model = build_model(&ModelSpec::MoeDense, &arch(), &task, &d, 3).unwrap();
    let before = params_of(&model);
    let state = run_training(&d, &task, model, &cfg(0, 3), "h").unwrap();
    assert_eq!(params_of(&state.model), before);
    assert_eq!(state.metrics.rows.len(), 1);
    assert_eq!(state.metrics.rows[0].epoch, 0);
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let d = dataset(200);
    let c = TrainConfig { learning_rate: 0.0, ..cfg(3, 1) };
    let state = run(&d, &ModelSpec::MoeDense, &beam_task(), &c);
    let losses: Vec<f64> = state.metrics.rows.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 4);
    assert!(losses.iter().all(|&l| l == losses[0]), "{losses:?}");
}

#[test]
fn same_seed_gives_identical_runs() {
    let d = dataset(200);
    let a = run(&d, &ModelSpec::MoeSparse { active: 5, epsilon: 1e-12 }, &beam_task(), &cfg(3, 9));
    let b = run(&d, &ModelSpec::MoeSparse { active: 5, epsilon: 1e-12 }, &beam_task(), &cfg(3, 9));
    assert_eq!(a, b);
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    let c = run(&d, &ModelSpec::MoeSparse { active: 5, epsilon: 1e-12 }, &beam_task(), &cfg(3, 10));
    assert_ne!(params_of(&a.model), params_of(&c.model));
}

#[test]
fn batch_loss_is_the_mean_of_per_sample_losses() {
    let d = dataset(200);
    for (task, spec) in [
        (beam_task(), ModelSpec::MoeDense),
        (TaskSpec::new(TaskKind::PathlossRegression), ModelSpec::Concat),
        (TaskSpec::new(TaskKind::TrajectoryTracking), ModelSpec::MoeSparse { active: 4, epsilon: 1e-12 }),
    ] {
        let model = build_model(&spec, &arch(), &task, &d, 0).unwrap();
        let data = TaskData::new(&d, &task, &model).unwrap();
        let idx: Vec<usize> = (10..50).collect();
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &data.inputs.batch(&idx).unwrap()).unwrap();
        let loss = match task.loss() {
            LossKind::CrossEntropy => cross_entropy_loss(&mut tape, pass.output, &data.targets.classes(&idx)).unwrap(),
            LossKind::Mse => mse_loss(&mut tape, pass.output, &data.targets.values(&idx)).unwrap(),
        };
        let per = tape.per_sample_losses(loss).unwrap().to_vec();
        assert_eq!(per.len(), idx.len());
        let mean = per.iter().sum::<f64>() / per.len() as f64;
        assert!((tape.scalar(loss) - mean).abs() < 1e-10);
    }
}

#[test]
fn split_is_disjoint_and_covering() {
    let d = dataset(333);
    let task = beam_task();
    let model = build_model(&ModelSpec::Concat, &arch(), &task, &d, 0).unwrap();
    let data = TaskData::new(&d, &task, &model).unwrap();
    let mut all: Vec<usize> = data.train_indices().iter().chain(data.test_indices()).copied().collect();
    assert_eq!(data.train_indices().len(), (0.7f64 * 333.0).ceil() as usize);
    all.sort_unstable();
    assert_eq!(all, (0..333).collect::<Vec<_>>());
}

#[test]
fn mismatched_train_fraction_is_rejected() {
    let d = dataset(100);
    let task = beam_task();
    let model = build_model(&ModelSpec::Concat, &arch(), &task, &d, 0).unwrap();
    let c = TrainConfig { train_fraction: 0.8, ..cfg(1, 0) };
    assert!(matches!(run_training(&d, &task, model, &c, "h"), Err(TaskError::Config(_))));
}

#[test]
fn full_support_sparse_training_tracks_dense() {
    let d = dataset(200);
    let task = beam_task();
    let dense = run(&d, &ModelSpec::MoeDense, &task, &cfg(5, 4));
    let sparse = run(&d, &ModelSpec::MoeSparse { active: 15, epsilon: 1e-12 }, &task, &cfg(5, 4));
    for (a, b) in dense.metrics.rows.iter().zip(&sparse.metrics.rows) {
        assert!((a.train_loss - b.train_loss).abs() < 1e-6);
        assert!((a.metric_value - b.metric_value).abs() < 1e-6);
    }
    for (a, b) in params_of(&dense.model).iter().zip(params_of(&sparse.model)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn sparse_runs_report_n_evaluations_per_sample() {
    let d = dataset(200);
    let task = beam_task();
    for (spec, n) in [(ModelSpec::MoeSparse { active: 5, epsilon: 1e-12 }, 5), (ModelSpec::MoeDense, 15)] {
        let model = build_model(&spec, &arch(), &task, &d, 0).unwrap();
        let data = TaskData::new(&d, &task, &model).unwrap();
        let eval = evaluate(&model, &data, data.test_indices()).unwrap();
        assert_eq!(eval.expert_evaluations, n * data.test_indices().len());
        assert_eq!(eval.expert_activations.iter().sum::<u64>() as usize, n * data.test_indices().len());
    }
}

#[test]
fn interrupted_run_resumes_bit_exactly() {
    let d = dataset(200);
    let task = beam_task();
    let spec = ModelSpec::MoeSparse { active: 5, epsilon: 1e-12 };
    let c = cfg(4, 2);
    let full = run(&d, &spec, &task, &c);

    let model = build_model(&spec, &arch(), &task, &d, c.seed).unwrap();
    let data = TaskData::new(&d, &task, &model).unwrap();
    let mut state = TrainState::new(model, &c, &task, "test");
    train(&data, &mut state, &c, &mut |s| Ok(if s.epochs_done() == 2 { Flow::Stop } else { Flow::Continue })).unwrap();
    assert_eq!(state.epochs_done(), 2);

    let run_info = RunInfo {
        config_hash: "test".into(),
        dataset_hash: d.manifest.config_hash.clone(),
        model: spec,
        arch: arch(),
        task: task.clone(),
        train: c.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    save_checkpoint(&path, &run_info, &state).unwrap();
    let (info, mut resumed) = load_checkpoint(&path).unwrap();
    assert_eq!(info, run_info);
    assert_eq!(resumed, state);
    train(&data, &mut resumed, &c, &mut |_| Ok(Flow::Continue)).unwrap();
    assert_eq!(resumed, full);
    assert_eq!(resumed.metrics.to_csv(), full.metrics.to_csv());
}

#[test]
fn checkpoint_bytes_round_trip() {
    let d = dataset(150);
    for (task, spec) in [
        (beam_task(), ModelSpec::MoeDense),
        (TaskSpec::new(TaskKind::PathlossRegression), ModelSpec::StaticWeighted { weights: None }),
        (TaskSpec::new(TaskKind::TrajectoryTracking), ModelSpec::Unimodal { modality: Modality::Position }),
    ] {
        let c = cfg(1, 5);
        let state = run(&d, &spec, &task, &c);
        let info = RunInfo { config_hash: "x".into(), dataset_hash: "y".into(), model: spec, arch: arch(), task, train: c };
        let bytes = encode_checkpoint(&info, &state).unwrap();
        let (info2, state2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(info2, info);
        assert_eq!(state2, state);
        assert_eq!(encode_checkpoint(&info2, &state2).unwrap(), bytes);
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let d = dataset(100);
    let c = cfg(0, 0);
    let state = run(&d, &ModelSpec::MoeDense, &beam_task(), &c);
    let info = RunInfo { config_hash: "x".into(), dataset_hash: "y".into(), model: ModelSpec::MoeDense, arch: arch(), task: beam_task(), train: c };
    let bytes = encode_checkpoint(&info, &state).unwrap();
    assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_checkpoint(&bad).is_err());
}

#[test]
fn nan_parameter_aborts_with_location() {
    let d = dataset(100);
    let task = beam_task();
    let mut model = build_model(&ModelSpec::MoeDense, &arch(), &task, &d, 0).unwrap();
    model.params_mut().tensors_mut()[0].values_mut()[0] = f64::NAN;
    let err = run_training(&d, &task, model, &cfg(2, 0), "h").unwrap_err();
    let TaskError::NonFinite { epoch, batch, param_norm, .. } = err else { panic!("unexpected error {err:?}") };
    assert_eq!((epoch, batch), (0, 0));
    assert!(param_norm.is_nan());
}

#[test]
fn static_weights_stay_fixed_during_training() {
    let d = dataset(150);
    let weights = vec![0.4, 0.3, 0.2, 0.05, 0.05];
    let state = run(&d, &ModelSpec::StaticWeighted { weights: Some(weights.clone()) }, &beam_task(), &cfg(2, 0));
    let AnyModel::Baseline(b) = &state.model else { panic!() };
    assert_eq!(b.static_weights(), weights.as_slice());
    for r in &state.metrics.rows {
        for (m, w) in r.gate_mass.unwrap().iter().zip(&weights) {
            assert!((m - w).abs() < 1e-12);
        }
    }
}

#[test]
fn concat_rows_have_no_gate_mass() {
    let d = dataset(100);
    let state = run(&d, &ModelSpec::Concat, &beam_task(), &cfg(1, 0));
    assert!(state.metrics.rows.iter().all(|r| r.gate_mass.is_none()));
    assert!(state.metrics.to_csv().lines().nth(3).unwrap().ends_with("nan,nan,nan,nan,nan"));
}

#[test]
fn gate_mass_rows_sum_to_one() {
    let d = dataset(150);
    for spec in [ModelSpec::MoeDense, ModelSpec::MoeSparse { active: 2, epsilon: 1e-12 }] {
        let state = run(&d, &spec, &beam_task(), &cfg(1, 0));
        for r in &state.metrics.rows {
            assert!((r.gate_mass.unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_gate_gives_uniform_adaptivity() {
    let d = dataset(300);
    let task = beam_task();
    let mut model = build_model(&ModelSpec::MoeDense, &arch(), &task, &d, 0).unwrap();
    let AnyModel::Moe(moe) = &mut model else { panic!() };
    let gate_params: Vec<_> = moe.params().ids().filter(|&id| moe.params().name(id).starts_with("gate")).collect();
    assert!(!gate_params.is_empty());
    for id in gate_params {
        moe.params_mut().get_mut(id).values_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let data = TaskData::new(&d, &task, &model).unwrap();
    let rows = evaluate_gating_adaptivity(&model, &data, data.test_indices()).unwrap();
    assert_eq!(rows.len(), 5);
    for r in rows {
        assert!((r.clean.unwrap() - 0.2).abs() < 1e-12);
        if let Some(c) = r.corrupted {
            assert!((c - 0.2).abs() < 1e-12);
        }
        assert_eq!(r.clean_slots + r.corrupted_slots, data.test_indices().len());
    }
}

#[test]
fn adaptivity_needs_a_gated_model() {
    let d = dataset(100);
    let task = beam_task();
    let model = build_model(&ModelSpec::Concat, &arch(), &task, &d, 0).unwrap();
    let data = TaskData::new(&d, &task, &model).unwrap();
    assert!(evaluate_gating_adaptivity(&model, &data, data.test_indices()).is_err());
}

#[test]
fn reliability_flags_never_reach_the_model() {
    let d = dataset(120);
    let mut flipped = d.clone();
    flipped.records.iter_mut().for_each(|r| r.reliability = r.reliability.map(|b| !b));
    let task = beam_task();
    let layout = task.layout().unwrap();
    let idx: Vec<usize> = (0..120).collect();
    assert_eq!(assemble_input(&d, &idx, &layout, &task).unwrap(), assemble_input(&flipped, &idx, &layout, &task).unwrap());
}

#[test]
fn trajectory_input_spans_the_window() {
    let d = dataset(50);
    let task = TaskSpec::new(TaskKind::TrajectoryTracking);
    let layout = task.layout().unwrap();
    let x = assemble_input(&d, &[10], &layout, &task).unwrap();
    let width: usize = x.groups.iter().map(|g| g.width).sum();
    let per_slot: usize = Modality::ALL.iter().map(|m| m.width()).sum();
    assert_eq!(width, per_slot * (task.window + 1));
}

#[test]
fn training_reduces_beam_loss_on_every_seed() {
    let d = generate_dataset(&ScenarioConfig { slots: 1024, ..Default::default() }, 0.7).unwrap();
    let task = beam_task();
    for seed in 0..3 {
        let c = TrainConfig { epochs: 10, seed, ..Default::default() };
        let model = build_model(&ModelSpec::MoeDense, &ArchConfig::default(), &task, &d, seed).unwrap();
        let state = run_training(&d, &task, model, &c, "h").unwrap();
        let rows = &state.metrics.rows;
        assert!(rows[10].train_loss < rows[1].train_loss, "seed {seed}");
        assert!(rows[10].metric_value > 1.0 / 32.0);
    }
}
