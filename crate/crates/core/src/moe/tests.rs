use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::baselines::{BaselineKind, BaselineModel};
use crate::ddouble::DoubleDouble;
use crate::gradcheck::{finite_difference_check, finite_difference_check_with_oracle};
use crate::modality::InputGroup;
use crate::params::ParamId;

fn small_arch(per_modality: usize) -> ArchConfig {
    ArchConfig { z_dim: 4, h_expert: 5, h_head: 5, gate_hidden: 6, experts_per_modality: per_modality }
}

fn layout() -> InputLayout {
    InputLayout::new(&Modality::ALL, 1).unwrap()
}

fn input(layout: &InputLayout, batch: usize, seed: u64) -> ModelInput<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = layout
        .groups
        .iter()
        .map(|&(m, w)| InputGroup { modality: m, width: w, values: (0..batch * w).map(|_| rng.random_range(-1.0..1.0)).collect() })
        .collect();
    ModelInput::new(batch, groups).unwrap()
}

fn model(arch: &ArchConfig, routing: Routing, seed: u64) -> MoeModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MoeModel::new(layout(), arch, routing, HeadKind::Classification { classes: 6 }, &mut rng).unwrap()
}

fn sparse(n: usize) -> Routing {
    Routing::Sparse { active: n, epsilon: 1e-12 }
}

fn ce_loss(m: &MoeModel<f64>, x: &ModelInput<f64>, control: GateControl<'_, f64>, tape: &mut Tape<f64>) -> Result<Var> {
    ce_loss_generic(m, x, control, tape)
}

fn ce_loss_generic<T: Scalar>(m: &MoeModel<T>, x: &ModelInput<T>, control: GateControl<'_, T>, tape: &mut Tape<T>) -> Result<Var> {
    let out = m.forward_with(tape, x, control)?.output;
    let labels: Vec<usize> = (0..x.batch).map(|r| (r * 5 + 1) % 6).collect();
    tape.cross_entropy(out, &labels)
}

fn param_grads(m: &mut MoeModel<f64>, x: &ModelInput<f64>) -> Vec<f64> {
    m.params_mut().zero_grad();
    let mut t = Tape::new();
    let l = ce_loss(m, x, GateControl::Learned, &mut t).unwrap();
    m.backward(&t, l).unwrap();
    m.params().tensors().iter().flat_map(|p| p.grad().to_vec()).collect()
}

fn copy_params(dst: &mut MoeModel<f64>, src: &MoeModel<f64>) {
    for (d, s) in dst.params_mut().tensors_mut().iter_mut().zip(src.params().tensors()) {
        d.values_mut().copy_from_slice(s.values());
    }
}

#[test]
fn default_pool_has_fifteen_experts() {
    let m = model(&ArchConfig::default(), sparse(5), 0);
    assert_eq!(m.total_experts(), 15);
    let mut t = Tape::new();
    let x = input(m.layout(), 2, 0);
    let (_, w) = m.gate_forward(&mut t, &x).unwrap();
    assert_eq!(t.shape(w), &[2, 15]);
    for row in t.value(w).chunks(15) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn invalid_routing_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for r in [sparse(0), sparse(16), Routing::Sparse { active: 2, epsilon: 0.0 }] {
        let m = MoeModel::<f64>::new(layout(), &ArchConfig::default(), r, HeadKind::Regression { outputs: 1 }, &mut rng);
        assert!(matches!(m, Err(CoreError::Parameter(_))), "{r:?}");
    }
}

#[test]
fn zero_gating_parameters_give_uniform_weights() {
    let mut m = model(&small_arch(3), sparse(5), 1);
    for id in m.gating().mlp.params() {
        m.params_mut().get_mut(id).values_mut().fill(0.0);
    }
    let x = input(m.layout(), 3, 1);
    let mut t = Tape::new();
    let pass = m.forward(&mut t, &x).unwrap();
    let gate = pass.gate.unwrap();
    assert!(gate.weights.iter().all(|&w| (w - 1.0 / 15.0).abs() < 1e-15));
    for r in 0..3 {
        assert_eq!(gate.decision(r).active_set, vec![0, 1, 2, 3, 4]);
    }
}

#[test]
fn nan_features_are_a_numeric_error() {
    let m = model(&small_arch(1), Routing::Dense, 0);
    let mut x = input(m.layout(), 2, 0);
    x.groups[2].values[3] = f64::NAN;
    let mut t = Tape::new();
    assert!(matches!(m.gate_forward(&mut t, &x), Err(CoreError::Numeric(_))));
}

#[test]
fn sparse_evaluates_exactly_n_experts_per_sample() {
    for n in [1, 3, 5, 15] {
        let m = model(&small_arch(3), sparse(n), 2);
        let x = input(m.layout(), 7, 2);
        let mut t = Tape::new();
        let pass = m.forward(&mut t, &x).unwrap();
        assert_eq!(pass.expert_evaluations, 7 * n);
        let gate = pass.gate.unwrap();
        for r in 0..7 {
            let d = gate.decision(r);
            assert_eq!(d.active_set.len(), n);
            let s: f64 = d.renormalized.iter().sum();
            assert!((1.0 - 1e-9..=1.0).contains(&s), "{s}");
            for (i, &m) in d.mask.iter().enumerate() {
                if !m {
                    assert_eq!(d.renormalized[i], 0.0);
                }
            }
        }
    }
}

#[test]
fn sparse_with_full_support_matches_dense() {
    let arch = small_arch(3);
    let dense = model(&arch, Routing::Dense, 4);
    let mut full = model(&arch, sparse(15), 99);
    copy_params(&mut full, &dense);
    let x = input(dense.layout(), 5, 4);
    let mut t = Tape::new();
    let a = dense.forward(&mut t, &x).unwrap().output;
    let b = full.forward(&mut t, &x).unwrap().output;
    for (p, q) in t.value(a).iter().zip(t.value(b)) {
        assert!((p - q).abs() < 1e-9);
    }
    let mut dense = dense;
    let gd = param_grads(&mut dense, &x);
    let gs = param_grads(&mut full, &x);
    for (p, q) in gd.iter().zip(&gs) {
        assert!((p - q).abs() < 1e-9, "{p} vs {q}");
    }
}

#[test]
fn inactive_experts_get_bitwise_zero_gradient() {
    let mut m = model(&small_arch(3), sparse(2), 5);
    // One sample so that "inactive for that sample" is inactive overall.
    let x = input(m.layout(), 1, 5);
    let mut t = Tape::new();
    let gate = m.forward(&mut t, &x).unwrap().gate.unwrap();
    param_grads(&mut m, &x);
    let mask = gate.decision(0).mask;
    for (e, expert) in m.experts().iter().enumerate() {
        let zero = expert.mlp.params().iter().all(|&id| m.params().get(id).grad().iter().all(|g| g.to_bits() == 0));
        assert_eq!(zero, !mask[e], "expert {e}");
    }
}

#[test]
fn batch_gradient_for_expert_only_comes_from_routed_rows() {
    let mut m = model(&small_arch(3), sparse(3), 6);
    let x = input(m.layout(), 6, 6);
    let mut t = Tape::new();
    let pass = m.forward(&mut t, &x).unwrap();
    param_grads(&mut m, &x);
    for (e, expert) in m.experts().iter().enumerate() {
        let any = expert.mlp.params().iter().any(|&id| m.params().get(id).grad().iter().any(|&g| g != 0.0));
        if pass.expert_rows[e] == 0 {
            assert!(!any, "expert {e} was never routed");
        }
    }
}

/// Zero-initialized biases put hidden units exactly on the relu kink whenever
/// a whole previous layer is dead for a row; finite differences are
/// meaningless there, so move biases off zero before checking.
fn jitter_biases(m: &mut MoeModel<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = m.params().ids().filter(|&id| m.params().name(id).ends_with("bias")).collect();
    for id in ids {
        m.params_mut().get_mut(id).values_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
}

/// Analytic `f64` gradients against central differences taken on a
/// double-double copy of the model, every coordinate included.
fn check_against_oracle(m: &MoeModel<f64>, x: &ModelInput<f64>, control: GateControl<'_, f64>) -> f64 {
    let mut hi = m.cast::<DoubleDouble>();
    let xh = x.cast::<DoubleDouble>();
    let hi_control = match control {
        GateControl::Learned => GateControl::Learned,
        GateControl::FrozenMask(mask) => GateControl::FrozenMask(mask),
        GateControl::Fixed(_) => unreachable!("not used here"),
    };
    let report = finite_difference_check_with_oracle(
        m,
        |m, t| ce_loss(m, x, control, t),
        &mut hi,
        |m, t| ce_loss_generic(m, &xh, hi_control, t),
        1e-6,
        |_, _| true,
    )
    .unwrap();
    assert_eq!(report.coordinates, m.params().scalar_count());
    report.max_rel_error
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut m = model(&small_arch(2), Routing::Dense, 7);
    jitter_biases(&mut m, 7);
    let x = input(m.layout(), 4, 7);
    let err = check_against_oracle(&m, &x, GateControl::Learned);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn sparse_gradients_match_finite_differences_with_frozen_mask() {
    for n in [1, 5] {
        let mut m = model(&small_arch(3), sparse(n), 8);
        jitter_biases(&mut m, 8);
        let x = input(m.layout(), 4, 8);
        let mut t = Tape::new();
        let mask = m.forward(&mut t, &x).unwrap().gate.unwrap().mask;
        let err = check_against_oracle(&m, &x, GateControl::FrozenMask(&mask));
        assert!(err < 1e-4, "N = {n}: {err}");
    }
}

#[test]
fn expert_gradients_match_finite_differences() {
    let mut m = model(&small_arch(1), Routing::Dense, 9);
    jitter_biases(&mut m, 9);
    let x = input(m.layout(), 2, 9);
    let radar: Vec<ParamId> = m.experts()[1].mlp.params();
    let r = finite_difference_check(
        &mut m,
        1e-6,
        |m, t| {
            let g = x.group(Modality::Radar).unwrap();
            let xv = t.constant(&[2, g.width], g.values.clone())?;
            let z = m.expert_forward(t, 1, xv)?;
            let sq = t.square(z)?;
            t.sum(sq)
        },
        |id, _| radar.contains(&id),
    )
    .unwrap();
    assert!(r.coordinates > 0);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn zero_expert_parameters_give_zero_embedding() {
    let mut m = model(&small_arch(1), Routing::Dense, 0);
    for id in m.experts()[0].mlp.params() {
        m.params_mut().get_mut(id).values_mut().fill(0.0);
    }
    let x = input(m.layout(), 2, 0);
    let mut t = Tape::new();
    let g = x.group(Modality::Vision).unwrap();
    let xv = t.constant(&[2, g.width], g.values.clone()).unwrap();
    let z = m.expert_forward(&mut t, 0, xv).unwrap();
    assert!(t.value(z).iter().all(|&v| v == 0.0));
    let bad = t.constant(&[2, 3], vec![0.0; 6]).unwrap();
    assert!(matches!(m.expert_forward(&mut t, 0, bad), Err(CoreError::Shape(_))));
}

#[test]
fn same_modality_experts_differ() {
    let m = model(&small_arch(3), Routing::Dense, 10);
    let x = input(m.layout(), 1, 10);
    let mut t = Tape::new();
    let g = x.group(Modality::Vision).unwrap();
    let xv = t.constant(&[1, g.width], g.values.clone()).unwrap();
    let a = m.expert_forward(&mut t, 0, xv).unwrap();
    let b = m.expert_forward(&mut t, 1, xv).unwrap();
    assert_ne!(t.value(a), t.value(b));
}

#[test]
fn dense_forward_is_deterministic() {
    let m = model(&small_arch(3), Routing::Dense, 11);
    let x = input(m.layout(), 4, 11);
    let mut t = Tape::new();
    let a = m.forward(&mut t, &x).unwrap().output;
    let b = m.forward(&mut t, &x).unwrap().output;
    assert!(t.value(a).iter().zip(t.value(b)).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn swapping_experts_with_gate_outputs_is_symmetric() {
    let arch = small_arch(3);
    for routing in [Routing::Dense, sparse(4)] {
        let m = model(&arch, routing, 12);
        let mut swapped = m.clone();
        // Experts 3 and 4 are both radar experts.
        let (a, b) = (m.experts()[3].mlp.params(), m.experts()[4].mlp.params());
        for (&pa, &pb) in a.iter().zip(&b) {
            let va = m.params().get(pa).values().to_vec();
            let vb = m.params().get(pb).values().to_vec();
            swapped.params_mut().get_mut(pa).values_mut().copy_from_slice(&vb);
            swapped.params_mut().get_mut(pb).values_mut().copy_from_slice(&va);
        }
        let last = m.gating().mlp.layers.last().unwrap().clone();
        let w = swapped.params_mut().get_mut(last.weight).values_mut();
        for row in w.chunks_mut(15) {
            row.swap(3, 4);
        }
        swapped.params_mut().get_mut(last.bias).values_mut().swap(3, 4);
        let x = input(m.layout(), 5, 12);
        let mut t = Tape::new();
        let o1 = m.forward(&mut t, &x).unwrap().output;
        let o2 = swapped.forward(&mut t, &x).unwrap().output;
        for (p, q) in t.value(o1).iter().zip(t.value(o2)) {
            assert!((p - q).abs() < 1e-12, "{routing:?}");
        }
    }
}

#[test]
fn fixed_one_hot_gate_matches_unimodal_baseline() {
    let arch = small_arch(1);
    let moe = model(&arch, Routing::Dense, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kind = BaselineKind::Unimodal { modality: Modality::Lidar };
    let mut uni = BaselineModel::<f64>::new(layout(), &arch, kind, HeadKind::Classification { classes: 6 }, &mut rng).unwrap();
    copy_by_name(uni.params_mut(), moe.params());
    let x = input(moe.layout(), 4, 13);
    let one_hot = [0.0, 0.0, 1.0, 0.0, 0.0];
    let mut t = Tape::new();
    let a = moe.forward_with(&mut t, &x, GateControl::Fixed(&one_hot)).unwrap();
    assert_eq!(a.expert_evaluations, 4);
    let b = uni.forward(&mut t, &x).unwrap().output;
    for (p, q) in t.value(a.output).iter().zip(t.value(b)) {
        assert!((p - q).abs() < 1e-9);
    }
}

#[test]
fn uniform_static_baseline_matches_frozen_uniform_gate() {
    let arch = small_arch(1);
    let moe = model(&arch, Routing::Dense, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kind = BaselineKind::StaticWeighted { weights: None };
    let mut stat = BaselineModel::<f64>::new(layout(), &arch, kind, HeadKind::Classification { classes: 6 }, &mut rng).unwrap();
    copy_by_name(stat.params_mut(), moe.params());
    let x = input(moe.layout(), 4, 14);
    let uniform = [0.2; 5];
    let mut t = Tape::new();
    let a = moe.forward_with(&mut t, &x, GateControl::Fixed(&uniform)).unwrap().output;
    let b = stat.forward(&mut t, &x).unwrap().output;
    for (p, q) in t.value(a).iter().zip(t.value(b)) {
        assert!((p - q).abs() < 1e-9);
    }
}

fn copy_by_name(dst: &mut ParamStore<f64>, src: &ParamStore<f64>) {
    let ids: Vec<ParamId> = dst.ids().collect();
    for id in ids {
        let name = dst.name(id).to_string();
        let s = src.ids().find(|&i| src.name(i) == name).unwrap_or_else(|| panic!("{name} missing"));
        dst.get_mut(id).values_mut().copy_from_slice(src.get(s).values());
    }
}

#[test]
fn fused_embedding_is_bounded_by_active_embeddings() {
    let m = model(&small_arch(3), sparse(4), 15);
    let x = input(m.layout(), 3, 15);
    let mut t = Tape::new();
    let gate = m.forward(&mut t, &x).unwrap().gate.unwrap();
    for r in 0..3 {
        let d = gate.decision(r);
        let row = x_row(&x, r);
        let mut embs = Vec::new();
        for &e in &d.active_set {
            let modality = m.experts()[e].modality;
            let g = row.group(modality).unwrap();
            let xv = t.constant(&[1, g.width], g.values.clone()).unwrap();
            let z = m.expert_forward(&mut t, e, xv).unwrap();
            embs.push(t.value(z).to_vec());
        }
        let refs: Vec<&[f64]> = embs.iter().map(|v| v.as_slice()).collect();
        let active: Vec<f64> = d.active_set.iter().map(|&e| d.renormalized[e]).collect();
        let z = fuse(&refs, &active).unwrap();
        let bound = embs.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(z.iter().all(|v| v.abs() <= bound + 1e-12));
    }
}

fn x_row(x: &ModelInput<f64>, r: usize) -> ModelInput<f64> {
    let groups = x
        .groups
        .iter()
        .map(|g| InputGroup { modality: g.modality, width: g.width, values: x.gather(g.modality, &[r]) })
        .collect();
    ModelInput::new(1, groups).unwrap()
}

#[test]
fn modality_mass_sums_to_one_and_names_kind() {
    let m = model(&small_arch(3), sparse(5), 16);
    assert_eq!(m.kind_name(), "moe_sparse5");
    let x = input(m.layout(), 3, 16);
    let mut t = Tape::new();
    let mass = m.forward(&mut t, &x).unwrap().modality_mass.unwrap();
    for row in mass {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
