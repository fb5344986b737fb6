use super::*;
use crate::models::{ModelConfig, ModelKind};
use crate::symbolic::InstrumentMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probability that a random positive outscores a random negative, ties counting half.
fn pairwise_auc(scores: &[f32], labels: &[bool]) -> Option<f64> {
    let (mut num2, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                num2 += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    (pairs > 0).then(|| num2 as f64 / (2 * pairs) as f64)
}

#[test]
fn ten_seconds_of_frames_pool_by_center_time() {
    let values: Vec<f32> = (0..312).map(|t| t as f32).collect();
    let m = pool_to_seconds(&values, 1, 312, 31.25, Pool::Max);
    assert_eq!(m.cols, 10);
    let last: Vec<f32> = m.data.clone();
    // frame t has center (t + 0.5) / 31.25; second 0 ends at frame 30, second 2 at 93
    assert_eq!(last[0], 30.0);
    assert_eq!(last[1], 61.0);
    assert_eq!(last[2], 93.0);
    assert_eq!(last[3], 124.0);
    assert_eq!(last[9], 311.0);
    let sizes: Vec<usize> = second_buckets(312, 31.25).iter().map(|r| r.len()).collect();
    assert_eq!(&sizes[..4], &[31, 31, 32, 31]);
}

#[test]
fn constant_and_single_frame_pooling() {
    let c = vec![0.25f32; 2 * 100];
    for pool in [Pool::Max, Pool::Mean] {
        assert!(pool_to_seconds(&c, 2, 100, 31.25, pool)
            .data
            .iter()
            .all(|&v| v == 0.25));
    }
    let mut one = vec![0f32; 64];
    one[40] = 1.0;
    let m = pool_to_seconds(&one, 1, 64, 31.25, Pool::Max);
    assert_eq!(m.data, vec![0.0, 1.0]);
    let m = pool_to_seconds(&one, 1, 64, 31.25, Pool::Mean);
    assert!(m.data[1] > 0.0 && m.data[1] < 1.0);
}

#[test]
fn auc_worked_cases() {
    assert_eq!(
        auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]),
        Some(1.0)
    );
    assert_eq!(
        auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]),
        Some(0.0)
    );
    assert_eq!(auc(&[0.5; 4], &[false, true, false, true]), Some(0.5));
    assert_eq!(auc(&[0.3, 0.3, 0.1], &[true, false, false]), Some(0.75));
    assert_eq!(auc(&[0.1, 0.2], &[true, true]), None);
    assert_eq!(auc(&[], &[]), None);
}

proptest! {
    #[test]
    fn auc_equals_the_pairwise_oracle(pairs in proptest::collection::vec((0u8..6, any::<bool>()), 1..50)) {
        let scores: Vec<f32> = pairs.iter().map(|p| p.0 as f32 * 0.5).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(auc(&scores, &labels), pairwise_auc(&scores, &labels));
    }

    #[test]
    fn auc_is_invariant_to_monotone_maps(raw in proptest::collection::vec((-3f32..3.0, any::<bool>()), 2..40)) {
        let scores: Vec<f32> = raw.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = raw.iter().map(|p| p.1).collect();
        let base = auc(&scores, &labels);
        let exp: Vec<f32> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f32> = scores.iter().map(|s| 2.0 * s + 7.0).collect();
        prop_assert_eq!(base, auc(&exp, &labels));
        prop_assert_eq!(base, auc(&affine, &labels));
    }

    #[test]
    fn auc_of_negated_scores_is_complementary(n in 2usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // distinct scores, so no ties
        let scores: Vec<f32> = (0..n).map(|i| i as f32 + rng.gen_range(0.0..0.5)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let neg: Vec<f32> = scores.iter().map(|s| -s).collect();
        if let (Some(a), Some(b)) = (auc(&scores, &labels), auc(&neg, &labels)) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn oracle_scores_give_perfect_auc_and_undefined_columns() {
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let labels = vec![
        Matrix {
            rows: 3,
            cols: 4,
            data: vec![1., 0., 1., 0., 0., 0., 0., 0., 1., 1., 0., 1.],
        },
        Matrix {
            rows: 3,
            cols: 2,
            data: vec![0., 1., 0., 0., 1., 1.],
        },
    ];
    let r = iad_from_scores(ScoreSource::Probe, &names, &labels, &labels).unwrap();
    assert_eq!(r.per_instrument[0].auc, Some(1.0));
    assert_eq!(r.per_instrument[1].auc, None);
    assert_eq!(r.per_instrument[2].auc, Some(1.0));
    assert_eq!(r.average, Some(1.0));
    assert_eq!(r.per_instrument[0].seconds, 6);
    assert!(r.table().contains("UNDEFINED"));
    assert_eq!(r.json_lines().lines().count(), 4);
    assert!(matches!(
        iad_from_scores(ScoreSource::Probe, &names, &[], &[]),
        Err(EvalError::EmptyTestset)
    ));
    assert!(matches!(
        iad_from_scores(ScoreSource::Probe, &names[..2], &labels, &labels),
        Err(EvalError::ShapeMismatch(_))
    ));
}

#[test]
fn per_clip_pooling_averages_defined_clips() {
    let names = vec!["a".to_string()];
    let m = |data: Vec<f32>| Matrix {
        rows: 1,
        cols: data.len(),
        data,
    };
    let scores = vec![m(vec![0.9, 0.1]), m(vec![0.2, 0.8]), m(vec![0.5, 0.4])];
    let labels = vec![m(vec![1., 0.]), m(vec![1., 0.]), m(vec![1., 1.])];
    let pooled = iad_from_scores_pooled(
        ScoreSource::Probe,
        &names,
        &scores,
        &labels,
        AucPooling::Seconds,
    )
    .unwrap();
    let clips = iad_from_scores_pooled(
        ScoreSource::Probe,
        &names,
        &scores,
        &labels,
        AucPooling::Clips,
    )
    .unwrap();
    // 5 of 8 positive/negative pairs ordered correctly across clips
    assert_eq!(pooled.average, Some(0.625));
    // 1 and 0 within the two mixed clips; the all-positive clip is undefined
    assert_eq!(clips.average, Some(0.5));
    assert_eq!(clips.per_instrument[0].seconds, 6);
}

fn toy_clip(seed: u64, frames: usize) -> (CqtMatrix, Pianoroll) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut roll = Pianoroll::zeros(frames, 31.25, InstrumentMap::toy());
    for m in 0..5 {
        let f = rng.gen_range(20..60);
        let start = rng.gen_range(0..frames);
        for t in start..frames.min(start + 40) {
            roll.set(f, t, m, true);
        }
    }
    let cqt = CqtMatrix::from_vec(
        (0..88 * frames).map(|_| rng.gen_range(0.0..0.1)).collect(),
        88,
        frames,
        31.25,
    );
    (cqt, roll)
}

#[test]
fn every_source_scores_every_second() {
    let data: Vec<_> = (0..3).map(|s| toy_clip(s, 100)).collect();
    let clips: Vec<(&CqtMatrix, &Pianoroll)> = data.iter().map(|(c, r)| (c, r)).collect();
    let model = Model::new(&ModelConfig::toy(ModelKind::Unet, 5), 1).unwrap();
    for source in [ScoreSource::DecoderDt, ScoreSource::SummedRoll] {
        let s = clip_scores(&model, None, clips[0].0, source).unwrap();
        assert_eq!((s.rows, s.cols), (5, 3));
        assert!(s.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let r = evaluate_iad(&model, None, &clips, source).unwrap();
        assert_eq!(r.per_instrument.len(), 5);
        assert_eq!(r.per_instrument[0].instrument, "piano");
    }
    assert!(matches!(
        evaluate_iad(&model, None, &clips, ScoreSource::Probe),
        Err(EvalError::MissingProbe)
    ));
    assert!(matches!(
        evaluate_iad(&model, None, &[], ScoreSource::DecoderDt),
        Err(EvalError::EmptyTestset)
    ));
    let probe =
        ProbeSpec::for_model(&model, CodeSource::Timbre, ProbeTarget::Instrument, 8).build(0);
    let s = clip_scores(&model, Some(&probe), clips[0].0, ScoreSource::Probe).unwrap();
    assert_eq!((s.rows, s.cols), (5, 3));
    let pitch_probe =
        ProbeSpec::for_model(&model, CodeSource::Timbre, ProbeTarget::Pitch, 8).build(0);
    assert!(matches!(
        clip_scores(&model, Some(&pitch_probe), clips[0].0, ScoreSource::Probe),
        Err(EvalError::ShapeMismatch(_))
    ));
}

#[test]
fn identical_arms_have_no_gap() {
    let data: Vec<_> = (0..4).map(|s| toy_clip(s + 10, 64)).collect();
    let clips: Vec<(&CqtMatrix, &Pianoroll)> = data.iter().map(|(c, r)| (c, r)).collect();
    let model = Model::new(&ModelConfig::toy(ModelKind::Unet, 5), 2).unwrap();
    let cfg = ProbeTrainConfig {
        steps: 5,
        batch_size: 2,
        hidden: 8,
        ..ProbeTrainConfig::default()
    };
    let r = disentanglement_report(&model, &model, &clips[..2], &clips[2..], &cfg).unwrap();
    assert_eq!(r.gap, Some(0.0));
    assert_eq!(r.pitch_auc_a, r.pitch_auc_b);
}

#[test]
fn adversarial_activation_is_a_probability() {
    let (cqt, _) = toy_clip(3, 48);
    for kind in [ModelKind::Duo, ModelKind::Unet] {
        let model = Model::new(&ModelConfig::toy(kind, 5), 2).unwrap();
        let a = mean_adversarial_pitch_activation(&model, &[&cqt]).unwrap();
        assert!(a > 0.0 && a < 1.0);
    }
}
