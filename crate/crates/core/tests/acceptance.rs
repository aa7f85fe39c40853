//! Release gate: one PASS/FAIL line per acceptance criterion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdam_core::ablation::{ablate, corpus, Sweep};
use sdam_core::backend::http::BackendServer;
use sdam_core::backend::{BackendEndpointConfig, ShiftSearchTracker};
use sdam_core::encoder::EncoderConfig;
use sdam_core::evaluation::{boundary_f, jaccard, stability_trend};
use sdam_core::frame_store::encode_mask_png;
use sdam_core::keyframe::{fuse, top_n};
use sdam_core::pipeline::run_pipeline;
use sdam_core::propagation::{plan, propagate};
use sdam_core::sampler::{self, score_segment};
use sdam_core::{
    Backends, BoundingBox, FeatureMap, FrameSequence, FusionConfig, Image, MaskFrame, MaskSequence,
    PipelineConfig, PipelineOutput, SamplerConfig,
};

use common::CountingTracker;

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn mds_oracle_equivalence() -> Check {
    let cfg = SamplerConfig {
        encoder: EncoderConfig::with_grid(8, 8),
        ..SamplerConfig::default()
    };
    let start = Instant::now();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(1..=64);
        let (w, h) = (rng.random_range(8..=24), rng.random_range(8..=24));
        let seq = common::random_sequence(seed, len, w, h);
        let got: BTreeSet<usize> = sampler::sample(&seq, &cfg)
            .map_err(|e| e.to_string())?
            .indices()
            .into_iter()
            .collect();
        let want = common::oracle_sample(&seq, (8, 8), (len / 4).max(1), 20, 16);
        ensure!(got == want, "seed {seed}: {got:?} != {want:?}");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(())
}

fn gaussian_point_check() -> Check {
    // Single-cell features at 60 degrees: cosine 0.5, so D = 0.5.
    let anchor = FeatureMap::new(1, 1, 3, vec![1.0, 0.0, 0.0]).ok_or("bad feature map")?;
    let member =
        FeatureMap::new(1, 1, 3, vec![0.5, 3f64.sqrt() / 2.0, 0.0]).ok_or("bad feature map")?;
    let scores = score_segment(&anchor, &vec![member; 7], 8, 2.0).map_err(|e| e.to_string())?;
    let got = scores[0];
    let direct = 0.5 * (-0.5f64).exp();
    ensure!((got - direct).abs() < 1e-12, "score {got} vs {direct}");
    Ok(())
}

fn jks_correctness() -> Check {
    let cfg = FusionConfig::new(0.75).map_err(|e| e.to_string())?;
    let fused = fuse(&[0.8, 0.6], &[0.4, 0.9], &cfg).map_err(|e| e.to_string())?;
    ensure!(fused == vec![0.7, 0.675], "fused {fused:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..1000 {
        let n = rng.random_range(1..20);
        let m: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..=1000) as f64 / 1000.0)
            .collect();
        let s: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..=1000) as f64 / 1000.0)
            .collect();
        let ts: Vec<usize> = (1..=n).collect();
        let fused = fuse(&m, &s, &cfg).map_err(|e| e.to_string())?;
        let (scale, shift, power) = (
            rng.random_range(0.1..50.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(0.3..4.0),
        );
        let moved: Vec<f64> = fused
            .iter()
            .map(|&x: &f64| scale * (x + 1.0).powf(power) + shift)
            .collect();
        ensure!(
            top_n(&ts, &fused, 1) == top_n(&ts, &moved, 1),
            "trial {trial}"
        );
    }

    let m: Vec<f64> = (0..30).map(|_| rng.random()).collect();
    let s: Vec<f64> = (0..30).map(|_| rng.random()).collect();
    let one = fuse(&m, &s, &FusionConfig::new(1.0).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let zero = fuse(&m, &s, &FusionConfig::new(0.0).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(one == m, "a=1 does not return the first list");
    ensure!(zero == s, "a=0 does not return the second list");
    Ok(())
}

fn png_bytes(masks: &MaskSequence) -> Vec<Vec<u8>> {
    masks
        .masks()
        .iter()
        .map(|m| encode_mask_png(m).unwrap())
        .collect()
}

fn stable_manifest(out: &PipelineOutput) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&out.manifest.to_json()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

fn check_run(out: &PipelineOutput, gt: &MaskSequence) -> Check {
    for t in 1..=gt.len() {
        let j = jaccard(out.masks.mask(t), gt.mask(t), 1).map_err(|e| e.to_string())?;
        ensure!(j >= 0.99, "frame {t}: J = {j}");
    }
    let key = out.manifest.decision.key_t;
    let (lo, hi) = common::POST_EVENT_SEGMENT;
    ensure!((lo..=hi).contains(&key), "key {key} outside {lo}..={hi}");
    Ok(())
}

fn end_to_end() -> Check {
    let run = || -> Result<(PipelineOutput, MaskSequence), String> {
        let render = common::teleport_scene()
            .render(common::TELEPORT_SEED)
            .map_err(|e| e.to_string())?;
        let backends = Backends::stubs_for(render.annotations.clone(), Some(render.masks.clone()));
        let out = run_pipeline(
            &render.frames,
            common::TELEPORT_QUERY,
            &PipelineConfig::default(),
            &backends,
        )
        .map_err(|e| e.to_string())?;
        Ok((out, render.masks.retain_ids(&[1])))
    };
    let start = Instant::now();
    let (a, gt) = run()?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2}s");
    check_run(&a, &gt)?;
    let (b, _) = run()?;
    ensure!(
        png_bytes(&a.masks) == png_bytes(&b.masks),
        "masks differ between runs"
    );
    ensure!(
        stable_manifest(&a) == stable_manifest(&b),
        "manifests differ between runs"
    );
    Ok(())
}

fn propagation_plan() -> Check {
    for len in 1..=20usize {
        let mut img = Image::filled(20, 16, [30, 30, 30]);
        let mut mask = MaskFrame::empty(20, 16);
        for y in 4..9 {
            for x in 5..12 {
                img.set_pixel(x, y, [200, 100, 0]);
                mask.set(x, y, 1);
            }
        }
        mask.set(0, 0, 1);
        let seq = FrameSequence::new("still", vec![img; len]).map_err(|e| e.to_string())?;
        for key in 1..=len {
            let p = plan(len, key).map_err(|e| e.to_string())?;
            let legs: Vec<usize> = p.forward.iter().chain(&p.backward).copied().collect();
            let set: BTreeSet<usize> = legs.iter().copied().collect();
            let want: BTreeSet<usize> = (1..=len).filter(|&t| t != key).collect();
            ensure!(
                set == want && legs.len() == set.len(),
                "T={len} key={key}: legs {legs:?}"
            );
            let tracker = CountingTracker::new(ShiftSearchTracker::default());
            let out = propagate(&seq, key, &mask, &tracker).map_err(|e| e.to_string())?;
            ensure!(
                out.masks.mask(key) == &mask,
                "T={len} key={key}: key mask altered"
            );
            if len > 1 && (key == 1 || key == len) {
                ensure!(
                    tracker.inits() == 1,
                    "T={len} key={key}: {} sessions",
                    tracker.inits()
                );
            }
        }
    }
    Ok(())
}

fn metrics_oracle() -> Check {
    let square = |x: i64| {
        let mut m = MaskFrame::empty(32, 32);
        m.fill_box(BoundingBox::new(x, 4, x + 10, 14), 1);
        m
    };
    let a = square(4);
    let j = |p: &MaskFrame, g: &MaskFrame| jaccard(p, g, 1).map_err(|e| e.to_string());
    ensure!(j(&a, &a)? == 1.0, "identical masks");
    ensure!(j(&a, &square(20))? == 0.0, "disjoint masks");
    ensure!(
        (j(&a, &square(9))? - 1.0 / 3.0).abs() < 1e-15,
        "half overlap"
    );

    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = common::random_mask(&mut rng, 32, 32, 1);
        let gt = common::random_mask(&mut rng, 32, 32, 1);
        let got = boundary_f(&pred, &gt, 1, Some(2.0)).map_err(|e| e.to_string())?;
        let want = common::oracle_boundary_f(&pred.layer(1), &gt.layer(1), 32, 32, 2.0);
        ensure!((got - want).abs() < 1e-9, "seed {seed}: {got} vs {want}");
    }

    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let series: Vec<f64> = (0..rng.random_range(5..80)).map(|_| rng.random()).collect();
        let got = stability_trend(&series, 5).map_err(|e| e.to_string())?;
        let want = common::oracle_moving_average(&series, 5);
        ensure!(
            got.len() == want.len() && got.iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-12),
            "series {seed}"
        );
    }
    Ok(())
}

fn ablation_ordering() -> Check {
    let report = ablate(&corpus(), &PipelineConfig::default(), &[Sweep::Strategy])
        .map_err(|e| e.to_string())?;
    println!("{}", report.to_table());
    let jf = |s: &str| {
        report
            .row("strategy", s)
            .map(|r| r.jf)
            .ok_or(format!("missing row {s}"))
    };
    let (mds, global, first) = (jf("motion_driven")?, jf("global")?, jf("first_frame")?);
    ensure!(
        mds >= global && global >= first,
        "{mds} / {global} / {first}"
    );
    Ok(())
}

fn wire_conformance() -> Check {
    let render = common::teleport_scene()
        .render(common::TELEPORT_SEED)
        .map_err(|e| e.to_string())?;
    let gt = render.masks.retain_ids(&[1]);
    let stubs = Backends::stubs_for(render.annotations.clone(), Some(render.masks.clone()));
    let server =
        BackendServer::start(stubs.clone(), "127.0.0.1:0", 4).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        backends: BackendEndpointConfig::remote(&server.url()),
        ..PipelineConfig::default()
    };
    let remote_backends =
        Backends::from_config(&cfg.backends, &stubs).map_err(|e| e.to_string())?;
    let local = run_pipeline(
        &render.frames,
        common::TELEPORT_QUERY,
        &PipelineConfig::default(),
        &stubs,
    )
    .map_err(|e| e.to_string())?;
    let remote = run_pipeline(
        &render.frames,
        common::TELEPORT_QUERY,
        &cfg,
        &remote_backends,
    )
    .map_err(|e| e.to_string())?;
    server.shutdown();
    check_run(&local, &gt)?;
    check_run(&remote, &gt)?;
    ensure!(
        png_bytes(&local.masks) == png_bytes(&remote.masks),
        "masks differ over HTTP"
    );
    Ok(())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("MDS oracle equivalence", mds_oracle_equivalence),
        ("Gaussian score point check", gaussian_point_check),
        ("keyframe selection correctness", jks_correctness),
        ("end-to-end synthetic run", end_to_end),
        ("propagation plan", propagation_plan),
        ("metrics oracle", metrics_oracle),
        ("ablation ordering", ablation_ordering),
        ("wire-schema conformance", wire_conformance),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(()) => println!("PASS  {name}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
