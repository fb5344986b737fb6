use super::*;
use rand::Rng;

fn random_cqt(seed: u64, frames: usize) -> CqtMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CqtMatrix::from_vec(
        (0..88 * frames).map(|_| rng.gen_range(0.0..1.0)).collect(),
        88,
        frames,
        31.25,
    )
}

fn duo(seed: u64) -> DuoEd {
    match Model::new(&ModelConfig::toy(ModelKind::Duo, 5), seed)
        .unwrap()
        .net
    {
        Network::Duo(m) => m,
        _ => unreachable!(),
    }
}

fn unet(seed: u64) -> UnetEd {
    match Model::new(&ModelConfig::toy(ModelKind::Unet, 5), seed)
        .unwrap()
        .net
    {
        Network::Unet(m) => m,
        _ => unreachable!(),
    }
}

#[test]
fn default_latent_is_smaller_than_the_input() {
    let cfg = ModelConfig::new(ModelKind::Unet, 5);
    assert_eq!(cfg.encoder.kappa(), 352);
    assert!(cfg.encoder.kappa() * 39 < 88 * 312);
    assert!(Model::new(&cfg, 0).is_ok());
    let mut wide = cfg.clone();
    wide.encoder.channels[3] = 64;
    assert!(matches!(
        Model::new(&wide, 0),
        Err(ModelError::InvalidConfig(_))
    ));
}

#[test]
fn default_duo_codes_for_ten_seconds() {
    let model = Model::new(&ModelConfig::new(ModelKind::Duo, 5), 1).unwrap();
    let Network::Duo(m) = &model.net else {
        unreachable!()
    };
    let (zt, zp) = m.encode(&random_cqt(1, 312)).unwrap();
    assert_eq!((zt.rows(), zt.cols()), (352, 39));
    assert_eq!((zp.rows(), zp.cols()), (352, 39));
    assert!(zt.rows() * zt.cols() < 27_456);
}

#[test]
fn duo_shapes_follow_the_input_length() {
    let m = duo(2);
    for (frames, tau) in [(312, 39), (624, 78)] {
        let (zt, zp) = m.encode(&random_cqt(3, frames)).unwrap();
        assert_eq!((zt.rows(), zt.cols()), (88, tau));
        assert_eq!(m.decode_roll(&zt, &zp).unwrap().shape(), (88, frames, 5));
        let t = m.decode_timbre(&zt).unwrap();
        assert_eq!((t.rows, t.cols), (5, frames));
        // the "wrong" code is a legal input
        let t = m.decode_timbre(&zp).unwrap();
        assert_eq!((t.rows, t.cols), (5, frames));
        let p = m.decode_pitch(&zt).unwrap();
        assert_eq!((p.rows, p.cols), (88, frames));
    }
    assert!(matches!(
        m.encode(&random_cqt(3, 100)),
        Err(ModelError::BadInputShape(_))
    ));
}

#[test]
fn duo_codes_depend_on_the_input_and_order_matters() {
    let m = duo(4);
    let (a, pa) = m.encode(&random_cqt(5, 64)).unwrap();
    let (b, _) = m.encode(&random_cqt(6, 64)).unwrap();
    assert_ne!(a, b);
    let fwd = m.decode_roll(&a, &pa).unwrap();
    let swapped = m
        .decode_roll(
            &LatentCode {
                kind: CodeKind::Timbre,
                ..pa.clone()
            },
            &a,
        )
        .unwrap();
    assert_ne!(fwd, swapped);
    let short = LatentCode::from_vec(vec![0.0; 88 * 4], 88, 4, CodeKind::Pitch);
    assert!(matches!(
        m.decode_roll(&a, &short),
        Err(ModelError::ShapeMismatch(_))
    ));
}

#[test]
fn zero_codes_give_translation_invariant_logits() {
    let m = duo(7);
    let z = LatentCode::from_vec(vec![0.0; 88 * 12], 88, 12, CodeKind::Timbre);
    let y = m.decode_roll(&z, &z).unwrap();
    // away from the borders the output repeats with the 8-frame upsampling period
    for f in [0, 40, 87] {
        for t in 24..56 {
            for mi in 0..5 {
                assert!((y.get(f, t, mi) - y.get(f, t + 8, mi)).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn heads_double_output_with_doubled_code() {
    let m = unet(8);
    let z = LatentCode::from_vec(vec![0.3; 88 * 10], 88, 10, CodeKind::Timbre);
    let z2 = LatentCode::from_vec(vec![0.3; 88 * 20], 88, 20, CodeKind::Timbre);
    assert_eq!(
        m.decode_timbre(&z).unwrap().cols * 2,
        m.decode_timbre(&z2).unwrap().cols
    );
    assert_eq!(
        m.decode_pitch(&z).unwrap().cols * 2,
        m.decode_pitch(&z2).unwrap().cols
    );
}

#[test]
fn unet_skip_levels_and_decoder() {
    let m = unet(9);
    for frames in [312, 624] {
        let (z, skips) = m.encode(&random_cqt(10, frames)).unwrap();
        assert_eq!(z.cols(), frames / 8);
        let times: Vec<usize> = skips.levels.iter().map(|l| l.shape()[3]).collect();
        assert_eq!(times, vec![frames, frames / 2, frames / 4]);
        let freqs: Vec<usize> = skips.levels.iter().map(|l| l.shape()[2]).collect();
        assert_eq!(freqs, vec![88, 44, 22]);
        assert_eq!(m.decode_roll(&z, &skips).unwrap().shape(), (88, frames, 5));
    }
    let (z, skips) = m.encode(&random_cqt(10, 64)).unwrap();
    let (z_again, skips_again) = m.encode(&random_cqt(10, 64)).unwrap();
    assert_eq!((&z, &skips), (&z_again, &skips_again));
    let base = m.decode_roll(&z, &skips).unwrap();
    assert_ne!(base, m.decode_roll(&z, &skips.zeroed()).unwrap());
    let zero_z = z.with_columns(vec![0.0; z.data().len()], z.cols());
    assert_ne!(base, m.decode_roll(&zero_z, &skips).unwrap());
    let (_, other) = m.encode(&random_cqt(10, 128)).unwrap();
    assert!(matches!(
        m.decode_roll(&z, &other),
        Err(ModelError::SkipShapeMismatch(_))
    ));
}

#[test]
fn groups_partition_the_parameters() {
    for kind in [ModelKind::Duo, ModelKind::Unet] {
        let model = Model::new(&ModelConfig::toy(kind, 5), 3).unwrap();
        let mut all = Vec::new();
        model.visit_params("", &mut |n, _| all.push(n));
        let mut from_groups = Vec::new();
        for &g in model.groups() {
            model
                .group(g)
                .unwrap()
                .visit_params(g.name(), &mut |n, _| from_groups.push(n));
        }
        let unique: std::collections::BTreeSet<_> = from_groups.iter().cloned().collect();
        assert_eq!(unique.len(), from_groups.len());
        assert_eq!(all, from_groups);
        assert_eq!(
            model.groups().len(),
            if kind == ModelKind::Duo { 5 } else { 4 }
        );
    }
}

#[test]
fn eval_forward_is_deterministic_and_padding_crops() {
    for kind in [ModelKind::Duo, ModelKind::Unet] {
        let model = Model::new(&ModelConfig::toy(kind, 5), 11).unwrap();
        let cqt = random_cqt(12, 101);
        let a = model.predict(&cqt).unwrap();
        let b = model.predict(&cqt).unwrap();
        assert_eq!(a.roll, b.roll);
        assert_eq!(a.roll.shape(), (88, 101, 5));
        assert_eq!(a.pad, 3);
        assert_eq!((a.timbre.rows, a.timbre.cols), (5, 101));
        assert_eq!(a.z_t.cols(), 13);
    }
}

#[test]
fn checkpoint_round_trip_and_failures() {
    let mut model = Model::new(&ModelConfig::toy(ModelKind::Unet, 5), 13).unwrap();
    model.steps_trained = 42;
    model.visit_params_mut("", &mut |_, p| p.velocity.fill(0.25));
    let bytes = model.to_checkpoint(serde_json::json!({"note": "x"}));
    let (back, extra) = Model::from_checkpoint(&bytes, Some(ModelKind::Unet)).unwrap();
    assert_eq!(extra["note"], "x");
    assert_eq!(back.steps_trained, 42);
    let mut a = Vec::new();
    model.visit_params("", &mut |_, p| {
        a.push((p.value.clone(), p.velocity.clone()))
    });
    let mut b = Vec::new();
    back.visit_params("", &mut |_, p| {
        b.push((p.value.clone(), p.velocity.clone()))
    });
    assert!(a
        .iter()
        .zip(&b)
        .all(|(x, y)| x.0.bitwise_eq(&y.0) && x.1.bitwise_eq(&y.1)));

    assert!(matches!(
        Model::from_checkpoint(&bytes, Some(ModelKind::Duo)),
        Err(ModelError::VersionMismatch(_))
    ));
    assert!(matches!(
        Model::from_checkpoint(&bytes[..bytes.len() / 2], None),
        Err(ModelError::CorruptCheckpoint(_))
    ));
    let mut flipped = bytes.clone();
    flipped[200] ^= 1;
    assert!(matches!(
        Model::from_checkpoint(&flipped, None),
        Err(ModelError::CorruptCheckpoint(_))
    ));
}
