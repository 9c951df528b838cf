use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{grad_check, GradCheckConfig, ROUNDOFF_FLOOR};
use crate::data::Task;
use crate::dsp::FeatureKind;

/// Per-layer summation written out independently of the runtime.
fn oracle_count(c: &PipConfig) -> usize {
    let l = c.time_length;
    let al = c.alpha * l;
    let mut widths: Vec<usize> = c.kappas.clone();
    if c.structure == Structure::Pip {
        for k in c.kappas.iter().rev().skip(1) {
            widths.push(*k);
        }
    }
    let mut total = 0;
    let mut din = c.in_dim;
    for k in &widths {
        let dout = k * c.in_dim;
        total += 2 * l; // temporal norm
        total += l * al + al; // W_{L→αL}
        total += al * l + l; // W_{αL→L}
        if c.positional_modeling {
            total += 3 * din + din;
        }
        total += 3 * l * l + l; // mixing
        total += 2 * din; // depth norm
        total += din * dout + dout;
        if c.linear_skip {
            total += din * dout + dout;
        }
        total += 2; // ε₁, ε₂
        din = dout;
    }
    if c.structure == Structure::Pip && c.long_range_skip {
        total += c.n - 1;
    }
    total + din * c.num_classes + c.num_classes
}

fn tiny() -> PipConfig {
    PipConfig {
        n: 2,
        kappas: vec![2, 3],
        time_length: 3,
        in_dim: 6,
        alpha: 2,
        num_classes: 3,
        ..PipConfig::base(3)
    }
}

fn single_stage(din_mult: usize) -> PipConfig {
    PipConfig {
        n: 1,
        kappas: vec![din_mult],
        time_length: 3,
        in_dim: 4,
        alpha: 2,
        num_classes: 2,
        ..PipConfig::base(2)
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn set(m: &mut PipmnModel<f64>, id: ParamId, f: impl Fn(usize) -> f64) {
    m.params
        .get_mut(id)
        .tensor
        .data_mut()
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = f(i));
}

#[test]
fn base_count_matches_oracle() {
    let m: PipmnModel = PipmnModel::new(PipConfig::base(10), 0).unwrap();
    assert_eq!(oracle_count(&m.config), 1_375_797);
    assert_eq!(m.param_count(), 1_375_797);
}

#[test]
fn mfcc_only_count_matches_oracle() {
    let c = Variant::Mfcc50.config(&PipConfig::base(10));
    assert_eq!(c.in_dim, 50);
    assert_eq!(oracle_count(&c), 348_297);
    assert_eq!(PipmnModel::<f32>::new(c, 0).unwrap().param_count(), 348_297);
    let mel = Variant::Mel100.config(&PipConfig::base(10));
    assert_eq!(PipmnModel::<f32>::new(mel, 0).unwrap().param_count(), 1_375_797);
}

#[test]
fn every_variant_matches_oracle() {
    let base = PipConfig::base(10);
    for v in Variant::ALL {
        let c = v.config(&base);
        let m: PipmnModel = build_variant(&c, 1).unwrap();
        assert_eq!(m.param_count(), oracle_count(&c), "{v}");
        let by_group: usize = m.param_breakdown().iter().map(|g| g.count).sum();
        assert_eq!(by_group, m.param_count());
    }
    let no_skip: PipmnModel = build_variant(&Variant::NoLongRangeSkip.config(&base), 1).unwrap();
    assert!(no_skip.rho_ids().is_empty());
    assert!(no_skip.params.iter().all(|p| !p.name.contains("rho")));
}

#[test]
fn more_classes_add_head_weights() {
    let a: PipmnModel = PipmnModel::new(PipConfig::base(10), 0).unwrap();
    let b: PipmnModel = PipmnModel::new(PipConfig::base(20), 0).unwrap();
    assert_eq!(b.param_count() - a.param_count(), 4_010);
}

#[test]
fn forward_shape_for_base_config() {
    let m: PipmnModel = PipmnModel::new(PipConfig::base(10), 3).unwrap();
    let x = random(&[2, 399, 100], 1).cast::<f32>();
    assert_eq!(m.logits(&x).unwrap().shape(), &[2, 10]);
}

#[test]
fn accepts_any_time_length_at_least_l() {
    let m: PipmnModel<f64> = PipmnModel::new(tiny(), 0).unwrap();
    for t in [3, 4, 8, 50] {
        let x = random(&[2, t, 6], t as u64).cast::<f32>();
        assert_eq!(m.logits(&x).unwrap().shape(), &[2, 3]);
    }
    let short = random(&[1, 2, 6], 0).cast::<f32>();
    assert!(m.logits(&short).is_err());
}

#[test]
fn wrong_depth_names_in_dim() {
    let m: PipmnModel = PipmnModel::new(tiny(), 0).unwrap();
    let e = m.logits(&random(&[1, 8, 5], 0).cast()).unwrap_err();
    assert!(matches!(
        e,
        ModelError::InputDepth {
            expected: 6,
            found: 5
        }
    ));
    assert!(e.to_string().contains("in_dim"));
}

#[test]
fn logits_stay_finite() {
    let m: PipmnModel = PipmnModel::new(tiny(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let scale = rng.gen_range(0.1..10.0);
        let data = (0..8 * 6).map(|_| rng.gen_range(-scale..scale)).collect();
        let x = Tensor::new(&[1, 8, 6], data).unwrap();
        assert!(m.logits(&x).unwrap().is_finite());
    }
}

#[test]
fn zero_rho_equals_skip_ablation() {
    let mut with: PipmnModel<f64> = PipmnModel::new(tiny(), 4).unwrap();
    for &id in &with.rho_ids().to_vec() {
        set(&mut with, id, |_| 0.0);
    }
    let without: PipmnModel<f64> = PipmnModel::new(
        PipConfig {
            long_range_skip: false,
            ..tiny()
        },
        4,
    )
    .unwrap();
    let x = random(&[2, 8, 6], 11).cast::<f32>();
    assert_eq!(with.logits(&x).unwrap(), without.logits(&x).unwrap());
}

#[test]
fn identity_positional_kernel() {
    let mut m: PipmnModel<f64> = PipmnModel::new(single_stage(2), 0).unwrap();
    let (k, b) = m.stage(0).positional.unwrap();
    set(&mut m, k, |i| if i % 3 == 1 { 1.0 } else { 0.0 });
    set(&mut m, b, |_| 0.0);
    let s = m.stage(0).clone();
    let mut g = Graph::new(&m.params);
    let x = g.input(random(&[2, 4, 3], 1)).unwrap();
    let y = positional_modeling(&mut g, &s, x).unwrap();
    assert_eq!(g.data(y), g.data(x));
}

#[test]
fn zero_temporal_mlp_is_zero() {
    let mut m: PipmnModel<f64> = PipmnModel::new(single_stage(2), 0).unwrap();
    let s = m.stage(0).clone();
    for id in [s.fc1.0, s.fc1.1, s.fc2.0, s.fc2.1] {
        set(&mut m, id, |_| 0.0);
    }
    let mut g = Graph::new(&m.params);
    let x = g.input(random(&[2, 4, 3], 2)).unwrap();
    let y = temporal_mlp(&mut g, &s, x).unwrap();
    assert_eq!(g.shape(y), &[2, 4, 3]);
    assert!(g.data(y).iter().all(|&v| v == 0.0));
}

#[test]
fn middle_mixing_recovers_input() {
    let mut m: PipmnModel<f64> = PipmnModel::new(single_stage(2), 0).unwrap();
    let s = m.stage(0).clone();
    let l = 3;
    // rows l..2l of the [3l, l] mixing weight form the identity
    set(&mut m, s.mix.0, |i| {
        let (r, c) = (i / l, i % l);
        if r >= l && r < 2 * l && r - l == c {
            1.0
        } else {
            0.0
        }
    });
    set(&mut m, s.mix.1, |_| 0.0);
    let mut g = Graph::new(&m.params);
    let x = g.input(random(&[2, 4, 3], 3)).unwrap();
    let y = temporal_feedforward(&mut g, &s, x).unwrap();
    assert_eq!(g.data(y), g.data(x));
}

#[test]
fn positional_ablation_changes_values_not_shapes() {
    let on: PipmnModel<f64> = PipmnModel::new(tiny(), 2).unwrap();
    let off: PipmnModel<f64> = PipmnModel::new(
        PipConfig {
            positional_modeling: false,
            ..tiny()
        },
        2,
    )
    .unwrap();
    let x = random(&[2, 8, 6], 3).cast::<f32>();
    let (a, b) = (on.logits(&x).unwrap(), off.logits(&x).unwrap());
    assert_eq!(a.shape(), b.shape());
    assert_ne!(a.data(), b.data());
}

#[test]
fn identity_skip_depth_block() {
    let mut m: PipmnModel<f64> = PipmnModel::new(single_stage(1), 0).unwrap();
    let s = m.stage(0).clone();
    let d = 4;
    set(&mut m, s.depth.0, |_| 0.0);
    set(&mut m, s.depth.1, |_| 0.0);
    let (w, b) = s.skip.unwrap();
    set(&mut m, w, |i| if i / d == i % d { 1.0 } else { 0.0 });
    set(&mut m, b, |_| 0.0);
    let mut g = Graph::new(&m.params);
    let x = g.input(random(&[2, 3, 4], 4)).unwrap();
    let y = depth_block(&mut g, &s, x).unwrap();
    assert_eq!(g.data(y), g.data(x));
}

#[test]
fn depth_block_maps_to_dout() {
    let m: PipmnModel<f64> = PipmnModel::new(single_stage(3), 0).unwrap();
    let s = m.stage(0).clone();
    let mut g = Graph::new(&m.params);
    let x = g.input(random(&[2, 3, 4], 4)).unwrap();
    let y = depth_block(&mut g, &s, x).unwrap();
    assert_eq!(g.shape(y), &[2, 3, 12]);
}

#[test]
fn zero_eps1_gates_temporal_branch() {
    let mut m: PipmnModel<f64> = PipmnModel::new(single_stage(2), 5).unwrap();
    let s = m.stage(0).clone();
    set(&mut m, s.eps1, |_| 0.0);
    set(&mut m, s.eps2, |_| 0.7);
    let mut g = Graph::new(&m.params);
    let x = g.input(random(&[2, 3, 4], 6)).unwrap();
    let y = dense_mlp(&mut g, &s, x).unwrap();
    let d = depth_block(&mut g, &s, x).unwrap();
    let expected: Vec<f64> = g.data(d).iter().map(|v| 0.7 * v).collect();
    assert_eq!(g.data(y), expected.as_slice());
}

#[test]
fn every_parameter_receives_gradient() {
    let m: PipmnModel<f64> = PipmnModel::new(tiny(), 1).unwrap();
    let mut seen = vec![false; m.params.len()];
    for trial in 0..10 {
        let mut g = Graph::new(&m.params);
        let x = g.input(random(&[2, 8, 6], trial)).unwrap();
        let y = m.forward(&mut g, x).unwrap();
        let w = g.input(random(&[2, 3], 100 + trial)).unwrap();
        let p = g.mul(y, w).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        for id in m.params.ids() {
            if grads.param(id).is_some_and(|gr| gr.iter().any(|&v| v != 0.0)) {
                seen[id.index()] = true;
            }
        }
    }
    for (p, s) in m.params.iter().zip(&seen) {
        assert!(s, "{} never received a nonzero gradient", p.name);
    }
}

fn weighted_logits_check(cfg: PipConfig, batch: usize, frames: usize, gc: GradCheckConfig) {
    let m: PipmnModel<f64> = PipmnModel::new(cfg.clone(), 7).unwrap();
    let x = random(&[batch, frames, cfg.in_dim], 8);
    let w = random(&[batch, cfg.num_classes], 9);
    let ids: Vec<ParamId> = m.params.ids().collect();
    let mut store = m.params.clone();
    let report = grad_check(
        &mut store,
        &ids,
        |g| {
            let xv = g.input(x.clone())?;
            let y = m.forward(g, xv).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            let wv = g.input(w.clone())?;
            let p = g.mul(y, wv)?;
            g.sum(p)
        },
        &gc,
    );
    assert!(report.passed(), "{report:?}");
    assert!(report.checked > 0);
}

#[test]
fn tiny_model_matches_finite_differences() {
    weighted_logits_check(tiny(), 2, 8, GradCheckConfig::default());
}

#[test]
fn tiny_ablations_match_finite_differences() {
    let base = tiny();
    for v in [
        Variant::NoLongRangeSkip,
        Variant::NoPositional,
        Variant::NoLinearSkip,
    ] {
        // gradients of order 1e-7 occur here and sit below what central
        // differences resolve to 1e-4
        let gc = GradCheckConfig {
            negligible: ROUNDOFF_FLOOR,
            ..Default::default()
        };
        weighted_logits_check(v.config(&base), 2, 8, gc);
    }
}

fn meta() -> CheckpointMeta {
    CheckpointMeta {
        feature_kind: FeatureKind::Stack,
        task: Task::Multiclass,
        classes: vec!["a".into(), "b".into(), "c".into()],
        extra: Default::default(),
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pipc");
    let mut m: PipmnModel = PipmnModel::new(tiny(), 3).unwrap();
    m.set_standardization(
        vec![0.1, -0.2, 0.3, 1e-7, 5.0, 0.0],
        vec![1.0, 0.5, 2.0, 3.3, 0.1, 7.0],
    )
    .unwrap();
    save_checkpoint(&path, &m, &meta()).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.meta, meta());
    assert_eq!(back.model.config, m.config);
    assert_eq!(back.model.feature_mean, m.feature_mean);
    assert_eq!(back.model.feature_std, m.feature_std);
    for (a, b) in m.params.iter().zip(back.model.params.iter()) {
        assert_eq!(a.name, b.name);
        assert!(a
            .tensor
            .data()
            .iter()
            .zip(b.tensor.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn checkpoint_rebuilds_header_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pipc");
    let m: PipmnModel = PipmnModel::new(
        PipConfig {
            num_classes: 7,
            ..tiny()
        },
        3,
    )
    .unwrap();
    save_checkpoint(&path, &m, &meta()).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.model.config.num_classes, 7);
    assert_eq!(
        back.model.params.by_name("head.w").unwrap().tensor.shape(),
        &[12, 7]
    );
}

#[test]
fn checkpoint_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pipc");
    let m: PipmnModel = PipmnModel::new(tiny(), 3).unwrap();
    let bytes = checkpoint::encode(&m, &meta());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(ModelError::Checkpoint { .. })
    ));

    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(checkpoint::decode(&path, &bad).is_err());

    assert!(checkpoint::decode(&path, &bytes[..bytes.len() - 4]).is_err());

    // a header whose shapes disagree with its config
    let text = String::from_utf8_lossy(&bytes).to_string();
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = &text[12..12 + hlen];
    let altered = header.replacen("\"num_classes\":3", "\"num_classes\":4", 1);
    assert_ne!(altered, header);
    let mut bad = bytes[..8].to_vec();
    bad.extend_from_slice(&(altered.len() as u32).to_le_bytes());
    bad.extend_from_slice(altered.as_bytes());
    bad.extend_from_slice(&bytes[12 + hlen..]);
    assert!(checkpoint::decode(&path, &bad).is_err());
}

#[test]
fn initialisation_is_seeded() {
    let a: PipmnModel = PipmnModel::new(tiny(), 1).unwrap();
    let b: PipmnModel = PipmnModel::new(tiny(), 1).unwrap();
    let c: PipmnModel = PipmnModel::new(tiny(), 2).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
    let eps2 = a.params.by_name("stage1.eps2").unwrap();
    assert_eq!(eps2.tensor.data(), &[1.0]);
    assert_eq!(a.params.by_name("skip1.rho").unwrap().tensor.data(), &[0.1f32]);
}
