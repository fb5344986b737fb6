use super::*;
use crate::models::ModelConfig;
use crate::symbolic::InstrumentMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random rolls with a CQT that carries their pitches and a per-instrument band.
fn toy_pairs(seed: u64, n: usize, frames: usize) -> Vec<(CqtMatrix, Pianoroll)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = InstrumentMap::toy();
    (0..n)
        .map(|_| {
            let mut roll = Pianoroll::zeros(frames, 31.25, map.clone());
            let mut cqt = vec![0f32; PITCH_BINS * frames];
            for m in 0..5 {
                if rng.gen_bool(0.5) {
                    let f = rng.gen_range(10..70);
                    let on = rng.gen_range(0..frames / 2);
                    for t in on..frames {
                        roll.set(f, t, m, true);
                        cqt[f * frames + t] += 1.0;
                        cqt[(f + 12 + m) * frames + t] += 0.5;
                    }
                }
            }
            for v in &mut cqt {
                *v += rng.gen_range(0.0..0.05);
            }
            (CqtMatrix::from_vec(cqt, PITCH_BINS, frames, 31.25), roll)
        })
        .collect()
}

fn batch_of(pairs: &[(CqtMatrix, Pianoroll)]) -> Batch {
    Batch::new(&pairs.iter().map(|(c, r)| (c, r)).collect::<Vec<_>>()).unwrap()
}

fn cfg(kind: ModelKind, adversarial: bool, lr: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        batch_size: 2,
        epochs: 1,
        model_kind: kind,
        adversarial_enabled: adversarial,
        ..TrainConfig::default()
    }
}

fn snapshot(model: &Model) -> Vec<Tensor> {
    let mut v = Vec::new();
    model.visit_params("", &mut |_, p| v.push(p.value.clone()));
    v
}

fn same(a: &[Tensor], b: &[Tensor]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bitwise_eq(y))
}

#[test]
fn batch_targets_are_projections() {
    let pairs = toy_pairs(1, 2, 16);
    let b = batch_of(&pairs);
    assert_eq!(b.x.shape(), &[2, 1, 88, 16]);
    assert_eq!(b.roll.shape(), &[2, 5, 88, 16]);
    assert_eq!(b.instruments.shape(), &[2, 5, 1, 16]);
    assert_eq!(b.pitches.shape(), &[2, 88, 1, 16]);
    let (_, r) = &pairs[1];
    for m in 0..5 {
        for t in 0..16 {
            let any = (0..88).any(|f| r.get(f, t, m));
            assert_eq!(b.instruments.sample(1)[m * 16 + t], any as u8 as f32);
        }
    }
    let odd = toy_pairs(1, 1, 12);
    assert!(matches!(
        Batch::new(&[(&odd[0].0, &odd[0].1)]),
        Err(TrainError::ShapeMismatch(_))
    ));
}

#[test]
fn duo_step_descends_on_a_fixed_batch() {
    let pairs = toy_pairs(2, 2, 32);
    let b = batch_of(&pairs);
    let mut model = Model::new(&ModelConfig::toy(ModelKind::Duo, 5), 3).unwrap();
    let before = evaluate_losses(&model, &b, Mode::Train).unwrap();
    let c = cfg(ModelKind::Duo, false, 1e-4);
    let report = train_step(&mut model, &b, &c).unwrap();
    assert!((report.reconstruction() - before.reconstruction()).abs() < 1e-9);
    let after = evaluate_losses(&model, &b, Mode::Train).unwrap();
    assert!(
        after.reconstruction() < before.reconstruction(),
        "{before:?} -> {after:?}"
    );
    assert_eq!(model.steps_trained, 1);
}

#[test]
fn unet_phases_descend_their_own_losses() {
    let pairs = toy_pairs(4, 2, 32);
    let b = batch_of(&pairs);
    let mut model = Model::new(&ModelConfig::toy(ModelKind::Unet, 5), 5).unwrap();
    let before = evaluate_losses(&model, &b, Mode::Train).unwrap();
    train_step(&mut model, &b, &cfg(ModelKind::Unet, false, 1e-4)).unwrap();
    let after = evaluate_losses(&model, &b, Mode::Train).unwrap();
    assert!(
        after.l_roll + after.l_t < before.l_roll + before.l_t,
        "{before:?} -> {after:?}"
    );
    assert!(after.l_p < before.l_p, "{before:?} -> {after:?}");
    assert_eq!(after.l_t_n, 0.0);
}

fn check_routing(kind: ModelKind) {
    let pairs = toy_pairs(6, 4, 32);
    let mut model = Model::new(&ModelConfig::toy(kind, 5), 7).unwrap();
    let c = cfg(kind, true, 0.01);
    for step in 0..3 {
        let b = batch_of(&pairs[(step % 2) * 2..(step % 2) * 2 + 2]);
        let mut prev: Option<Vec<Vec<Tensor>>> = None;
        let mut phases = Vec::new();
        train_step_observed(&mut model, &b, &c, c.learning_rate, &mut |phase, m| {
            let now: Vec<Vec<Tensor>> = m.groups().iter().map(|&g| m.group_values(g)).collect();
            if let Some(p) = &prev {
                let allowed = phase_groups(kind, phase);
                for (i, &g) in m.groups().iter().enumerate() {
                    let unchanged = same(&p[i], &now[i]);
                    if allowed.contains(&g) {
                        assert!(!unchanged, "{phase:?} did not update {}", g.name());
                    } else {
                        assert!(unchanged, "{phase:?} modified {}", g.name());
                    }
                }
            }
            phases.push(phase);
            prev = Some(now);
        })
        .unwrap();
        let expect = match kind {
            ModelKind::Duo => vec![Phase::Start, Phase::Joint, Phase::Adversarial],
            ModelKind::Unet => vec![
                Phase::Start,
                Phase::Joint,
                Phase::PitchDecoder,
                Phase::Adversarial,
            ],
        };
        assert_eq!(phases, expect);
    }
}

#[test]
fn duo_adversarial_phase_touches_encoders_only() {
    check_routing(ModelKind::Duo);
}

#[test]
fn unet_phases_touch_only_their_groups() {
    check_routing(ModelKind::Unet);
}

#[test]
fn zero_lambda_equals_disabled_adversary() {
    for kind in [ModelKind::Duo, ModelKind::Unet] {
        let pairs = toy_pairs(8, 2, 32);
        let b = batch_of(&pairs);
        let base = Model::new(&ModelConfig::toy(kind, 5), 9).unwrap();
        let mut off = base.clone();
        let mut zero = base.clone();
        let mut after_joint = None;
        for _ in 0..2 {
            train_step(&mut off, &b, &cfg(kind, false, 0.01)).unwrap();
            let c = TrainConfig {
                adversarial_weight: 0.0,
                ..cfg(kind, true, 0.01)
            };
            train_step_observed(&mut zero, &b, &c, 0.01, &mut |phase, m| {
                assert_ne!(phase, Phase::Adversarial);
                if phase == Phase::Joint && kind == ModelKind::Duo {
                    after_joint = Some(snapshot(m));
                }
            })
            .unwrap();
        }
        assert!(same(&snapshot(&off), &snapshot(&zero)));
        if kind == ModelKind::Duo {
            assert!(same(&snapshot(&zero), after_joint.as_ref().unwrap()));
        }
    }
}

#[test]
fn non_finite_loss_aborts() {
    let pairs = toy_pairs(10, 2, 16);
    let b = batch_of(&pairs);
    let mut model = Model::new(&ModelConfig::toy(ModelKind::Unet, 5), 1).unwrap();
    model.visit_params_mut("", &mut |name, p| {
        if name.ends_with("conv3.weight") {
            p.value.fill(f32::NAN);
        }
    });
    let err = train_step(&mut model, &b, &cfg(ModelKind::Unet, true, 0.01)).unwrap_err();
    assert!(
        matches!(err, TrainError::NonFiniteLoss { step: 0, .. }),
        "{err}"
    );
}

#[test]
fn kind_mismatch_is_rejected() {
    let pairs = toy_pairs(10, 2, 16);
    let mut model = Model::new(&ModelConfig::toy(ModelKind::Unet, 5), 1).unwrap();
    assert!(matches!(
        train_step(
            &mut model,
            &batch_of(&pairs),
            &cfg(ModelKind::Duo, true, 0.01)
        ),
        Err(TrainError::InvalidConfig(_))
    ));
}

#[test]
fn epoch_order_is_a_seeded_permutation() {
    let t = Trainer::new(TrainConfig::default()).unwrap();
    let a = t.epoch_order(10, 0);
    assert_eq!(a, t.epoch_order(10, 0));
    assert_ne!(a, t.epoch_order(10, 1));
    let mut sorted = a.clone();
    sorted.sort();
    assert_eq!(sorted, (0..10).collect::<Vec<_>>());
}

#[test]
fn resume_matches_uninterrupted_training() {
    for kind in [ModelKind::Duo, ModelKind::Unet] {
        let data = toy_pairs(11, 6, 16);
        let c = TrainConfig {
            epochs: 3,
            max_steps: Some(5),
            ..cfg(kind, true, 0.01)
        };
        let mut model = Model::new(&ModelConfig::toy(kind, 5), 12).unwrap();
        let mut trainer = Trainer::new(c.clone()).unwrap();
        let mut full = Vec::new();
        for _ in 0..5 {
            full.push(
                trainer
                    .step(&mut model, &data, &mut |_, _| {})
                    .unwrap()
                    .losses,
            );
        }

        let mut m2 = Model::new(&ModelConfig::toy(kind, 5), 12).unwrap();
        let mut t2 = Trainer::new(c).unwrap();
        let mut part = Vec::new();
        for _ in 0..4 {
            part.push(t2.step(&mut m2, &data, &mut |_, _| {}).unwrap().losses);
        }
        let bytes = t2.save(&m2);
        let (mut t3, mut m3) = Trainer::resume(&bytes).unwrap();
        assert_eq!(t3, t2);
        part.push(t3.step(&mut m3, &data, &mut |_, _| {}).unwrap().losses);
        assert_eq!(full, part);
        let mut a = Vec::new();
        model.visit_params("", &mut |_, p| {
            a.extend([p.value.clone(), p.velocity.clone(), p.alt_velocity.clone()])
        });
        let mut b = Vec::new();
        m3.visit_params("", &mut |_, p| {
            b.extend([p.value.clone(), p.velocity.clone(), p.alt_velocity.clone()])
        });
        assert!(same(&a, &b));
        assert!(t3.finished());
    }
}

#[test]
fn run_respects_the_step_budget() {
    let data = toy_pairs(13, 4, 16);
    let c = TrainConfig {
        epochs: 100,
        max_steps: Some(3),
        ..cfg(ModelKind::Unet, true, 0.01)
    };
    let mut model = Model::new(&ModelConfig::toy(ModelKind::Unet, 5), 1).unwrap();
    let mut seen = 0;
    let log = Trainer::new(c)
        .unwrap()
        .run(&mut model, &data, &mut |_| seen += 1)
        .unwrap();
    assert_eq!((log.len(), seen), (3, 3));
    assert_eq!(
        log.iter().map(|r| r.epoch).collect::<Vec<_>>(),
        vec![0, 0, 1]
    );
    let line = serde_json::to_string(&log[0]).unwrap();
    assert!(line.contains("\"l_roll\"") && line.contains("\"wall_time_s\""));
}

fn frozen_hash(model: &Model) -> String {
    let mut bytes = Vec::new();
    model.visit_params("", &mut |_, p| {
        bytes.extend(p.value.data().iter().flat_map(|v| v.to_le_bytes()))
    });
    model.visit_buffers("", &mut |_, b| {
        bytes.extend(b.iter().flat_map(|v| v.to_le_bytes()))
    });
    crate::digest::sha256_hex(&bytes)
}

#[test]
fn probe_descends_and_leaves_the_model_frozen() {
    let data = toy_pairs(14, 16, 64);
    let clips: Vec<(&CqtMatrix, &Pianoroll)> = data.iter().map(|(c, r)| (c, r)).collect();
    let model = Model::new(&ModelConfig::toy(ModelKind::Unet, 5), 2).unwrap();
    let hash = frozen_hash(&model);
    let spec = ProbeSpec::for_model(&model, CodeSource::Timbre, ProbeTarget::Instrument, 16);
    let mut probe = spec.build(1);
    let pc = ProbeTrainConfig {
        steps: 50,
        batch_size: 8,
        learning_rate: 0.05,
        hidden: 16,
        ..ProbeTrainConfig::default()
    };
    let losses = train_probe(
        &model,
        &mut probe,
        &clips,
        CodeSource::Timbre,
        ProbeTarget::Instrument,
        &pc,
    )
    .unwrap();
    assert_eq!(losses.len(), 50);
    let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = losses[45..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");
    assert_eq!(hash, frozen_hash(&model));

    let bytes = save_probe(&spec, &probe, 50);
    let (spec2, probe2) = load_probe(&bytes).unwrap();
    assert_eq!(spec, spec2);
    let ex = probe_examples(
        &model,
        &clips[..1],
        CodeSource::Timbre,
        ProbeTarget::Instrument,
    )
    .unwrap();
    assert_eq!(
        probe_logits(&probe, &ex[0]).unwrap(),
        probe_logits(&probe2, &ex[0]).unwrap()
    );
    assert!(load_probe(&model.to_checkpoint(serde_json::Value::Null)).is_err());
}

#[test]
fn pitch_code_needs_a_duo_model() {
    let data = toy_pairs(15, 1, 32);
    let clips: Vec<(&CqtMatrix, &Pianoroll)> = data.iter().map(|(c, r)| (c, r)).collect();
    let unet = Model::new(&ModelConfig::toy(ModelKind::Unet, 5), 2).unwrap();
    assert!(matches!(
        probe_examples(&unet, &clips, CodeSource::Pitch, ProbeTarget::Pitch),
        Err(TrainError::InvalidConfig(_))
    ));
    let duo = Model::new(&ModelConfig::toy(ModelKind::Duo, 5), 2).unwrap();
    let ex = probe_examples(&duo, &clips, CodeSource::Pitch, ProbeTarget::Pitch).unwrap();
    assert_eq!((ex[0].labels.rows, ex[0].labels.cols), (88, 1));
}
