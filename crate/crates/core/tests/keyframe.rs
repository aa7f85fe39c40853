use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdam_core::backend::{FrameSegmentation, ObjectMask, SegmentationResult};
use sdam_core::keyframe::{fuse, rank, select, top_n, FusedScore, KeyframeError};
use sdam_core::memory::{memorize, MemoryBank};
use sdam_core::{BoundingBox, EncoderConfig, FusionConfig, Image, MaskFrame};

#[test]
fn fusion_hand_values() {
    let cfg = FusionConfig::new(0.75).unwrap();
    assert_eq!(
        fuse(&[0.8, 0.6], &[0.4, 0.9], &cfg).unwrap(),
        vec![0.7, 0.675]
    );
}

#[test]
fn fusion_boundaries_return_inputs_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m: Vec<f64> = (0..50).map(|_| rng.random()).collect();
    let s: Vec<f64> = (0..50).map(|_| rng.random()).collect();
    assert_eq!(fuse(&m, &s, &FusionConfig::new(1.0).unwrap()).unwrap(), m);
    assert_eq!(fuse(&m, &s, &FusionConfig::new(0.0).unwrap()).unwrap(), s);
}

#[test]
fn fusion_rejects_bad_input() {
    let cfg = FusionConfig::default();
    assert!(matches!(
        fuse(&[0.1], &[0.1, 0.2], &cfg),
        Err(KeyframeError::LengthMismatch { .. })
    ));
    assert!(matches!(
        fuse(&[1.7], &[0.1], &cfg),
        Err(KeyframeError::OutOfRange { .. })
    ));
    assert!(FusionConfig::new(1.01).is_err());
    assert!(FusionConfig::new(-0.1).is_err());
}

/// A random strictly increasing map on `[0, 1]`, built from a few
/// monotone pieces.
fn random_increasing(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 {
    let scale = rng.random_range(0.1..50.0);
    let shift = rng.random_range(-10.0..10.0);
    let power = rng.random_range(0.3..4.0);
    let curve = rng.random_range(0..4);
    move |x: f64| {
        let y = match curve {
            0 => x,
            1 => (x + 1.0).powf(power),
            2 => (power * x).exp(),
            _ => (x + 0.5).ln(),
        };
        scale * y + shift
    }
}

#[test]
fn argmax_survives_1000_increasing_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..1000 {
        let n = rng.random_range(1..20);
        // Scores on a millesimal grid, so distinct values stay distinct under
        // any of the transforms below.
        let grid = |rng: &mut ChaCha8Rng| rng.random_range(0..=1000) as f64 / 1000.0;
        let m: Vec<f64> = (0..n).map(|_| grid(&mut rng)).collect();
        let s: Vec<f64> = (0..n).map(|_| grid(&mut rng)).collect();
        let ts: Vec<usize> = {
            let mut all: Vec<usize> = (1..=64).collect();
            for i in 0..n {
                let j = rng.random_range(i..64);
                all.swap(i, j);
            }
            all.truncate(n);
            all
        };
        let a = [0.4, 0.5, 0.6, 0.75][trial % 4];
        let fused = fuse(&m, &s, &FusionConfig::new(a).unwrap()).unwrap();
        let f = random_increasing(&mut rng);
        let moved: Vec<f64> = fused.iter().map(|&x| f(x)).collect();
        assert_eq!(
            top_n(&ts, &fused, 1),
            top_n(&ts, &moved, 1),
            "trial {trial}: {fused:?}"
        );
    }
}

fn seg_frame(t: usize, with_object: bool, score: f64) -> FrameSegmentation {
    let mut mask = MaskFrame::empty(8, 8);
    if with_object {
        mask.fill_box(BoundingBox::new(1, 1, 4, 4), 1);
    }
    FrameSegmentation {
        t,
        objects: if with_object {
            vec![ObjectMask { id: 1, mask, score }]
        } else {
            vec![]
        },
        frame_score: if with_object { score } else { 0.0 },
    }
}

fn scores(pairs: &[(usize, f64)]) -> Vec<FusedScore> {
    pairs
        .iter()
        .map(|&(t, fused)| FusedScore {
            t,
            s_mllm: fused,
            s_sam: fused,
            fused,
        })
        .collect()
}

#[test]
fn selection_examples() {
    let seg = SegmentationResult {
        frames: [2, 3, 5, 9]
            .iter()
            .map(|&t| seg_frame(t, true, 0.9))
            .collect(),
    };
    let d = select(&scores(&[(3, 0.7), (9, 0.675)]), &seg, 1, 0.75, (8, 8)).unwrap();
    assert_eq!(d.key_t, 3);
    assert_eq!(d.runner_ups, vec![9]);
    let d = select(&scores(&[(5, 0.5), (2, 0.5)]), &seg, 1, 0.75, (8, 8)).unwrap();
    assert_eq!(d.key_t, 2);
    let d = select(
        &scores(&[(2, 0.1), (3, 0.9), (5, 0.5)]),
        &seg,
        2,
        0.75,
        (8, 8),
    )
    .unwrap();
    assert_eq!(d.keys, vec![3, 5]);
    assert_eq!(d.key_masks.len(), 2);
}

#[test]
fn empty_key_mask_is_an_error() {
    let seg = SegmentationResult {
        frames: vec![seg_frame(4, false, 0.0), seg_frame(6, true, 0.8)],
    };
    let err = select(&scores(&[(4, 0.9), (6, 0.2)]), &seg, 1, 0.6, (8, 8)).unwrap_err();
    assert!(matches!(err, KeyframeError::EmptyKeyMask { t: 4 }));
    assert!(err.to_string().contains("empty key mask"));
}

#[test]
fn decision_serializes_for_audit() {
    let seg = SegmentationResult {
        frames: vec![seg_frame(3, true, 0.9)],
    };
    let s = vec![FusedScore {
        t: 3,
        s_mllm: 0.7,
        s_sam: 0.9,
        fused: 0.78,
    }];
    let d = select(&s, &seg, 1, 0.6, (8, 8)).unwrap();
    assert_eq!(
        serde_json::to_string(&d.record()).unwrap(),
        r#"{"key_t":3,"scores":[{"t":3,"s_mllm":0.7,"s_sam":0.9,"fused":0.78}],"a":0.6}"#
    );
}

#[test]
fn memory_descriptor_follows_the_object() {
    let paint = |dx: usize| {
        let mut img = Image::filled(40, 30, [20, 20, 20]);
        let mut mask = MaskFrame::empty(40, 30);
        for y in 5..15 {
            for x in 3 + dx..13 + dx {
                let v = (40 + 15 * (x - dx) + 7 * y) as u8;
                img.set_pixel(x, y, [v, 255 - v, 90]);
                mask.set(x, y, 2);
            }
        }
        (img, mask)
    };
    let enc = EncoderConfig::default();
    let (img_a, mask_a) = paint(0);
    let (img_b, mask_b) = paint(17);
    let a = memorize(&img_a, 1, &mask_a, &enc).unwrap();
    let b = memorize(&img_b, 2, &mask_b, &enc).unwrap();
    assert_eq!(a.len(), 1);
    assert_eq!(a[0].descriptor.len(), 4 * 4 * 3);
    assert_eq!(a[0].area, 100);
    assert_eq!(b[0].bbox, a[0].bbox.translate(17, 0));
    for (x, y) in a[0].descriptor.iter().zip(&b[0].descriptor) {
        assert!((x - y).abs() < 1e-12);
    }

    let bank = MemoryBank::new();
    bank.extend(a.clone()).unwrap();
    bank.extend(b).unwrap();
    assert!(bank.extend(a).is_err(), "same object and frame twice");
    assert_eq!(bank.lookup(2).len(), 2);
    let mut out = Vec::new();
    bank.dump_jsonl(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 2);
}

proptest! {
    #[test]
    fn fuse_is_monotone_in_each_input(
        m in 0.0f64..=1.0, s in 0.0f64..=1.0, bump in 0.0f64..=1.0, a in 0.01f64..0.99,
    ) {
        let cfg = FusionConfig::new(a).unwrap();
        let base = fuse(&[m], &[s], &cfg).unwrap()[0];
        let up_m = fuse(&[(m + bump).min(1.0)], &[s], &cfg).unwrap()[0];
        let up_s = fuse(&[m], &[(s + bump).min(1.0)], &cfg).unwrap()[0];
        prop_assert!(up_m >= base && up_s >= base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn ranking_is_deterministic_under_ties(vals in prop::collection::vec(0u8..4, 1..12)) {
        let s = scores(&vals.iter().enumerate().map(|(i, &v)| (i + 1, f64::from(v) / 4.0)).collect::<Vec<_>>());
        let mut reversed = s.clone();
        reversed.reverse();
        let (a, b) = (rank(&s), rank(&reversed));
        prop_assert_eq!(&a, &b);
        for w in a.windows(2) {
            prop_assert!(w[0].fused > w[1].fused || (w[0].fused == w[1].fused && w[0].t < w[1].t));
        }
    }
}
