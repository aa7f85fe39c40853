//! Ablation harness: run the pipeline over a synthetic corpus under swept
//! settings and tabulate mean J, F and J&F.
//!
//! The built-in corpus mixes two kinds of abrupt events. *Transient* targets
//! are on screen only between two anchors, so only motion-driven sampling can
//! land on them. *Late-entry* targets appear after the first frame, which
//! defeats first-frame sampling but not anchor sampling. A failed run is
//! scored as an all-background prediction.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Backends;
use crate::evaluation::{self, EvalError, MetricsReport};
use crate::frame_store::synth::{SceneEvent, SceneObject, Trajectory};
use crate::frame_store::{FrameStoreError, MaskFrame, MaskSequence, ObjectId, SyntheticScene};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use crate::sampler::SamplingStrategy;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("scene {scene}: {source}")]
    Scene {
        scene: String,
        #[source]
        source: FrameStoreError,
    },
    #[error("scene {scene}: {source}")]
    Pipeline {
        scene: String,
        #[source]
        source: PipelineError,
    },
    #[error("scene {scene}: {source}")]
    Eval {
        scene: String,
        #[source]
        source: EvalError,
    },
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScene {
    pub name: String,
    pub scene: SyntheticScene,
    pub query: String,
    /// Objects the query refers to; only these are scored.
    pub targets: Vec<ObjectId>,
    pub seed: u64,
}

const TARGET_COLORS: [[u8; 3]; 5] = [
    [230, 40, 40],
    [40, 200, 60],
    [240, 200, 30],
    [200, 60, 220],
    [30, 210, 220],
];
const TARGET_NAMES: [&str; 5] = ["red", "green", "yellow", "magenta", "cyan"];

/// Ten 40-frame, 64×64 scenes: five transient, five late-entry. Every scene
/// also has a distractor that moves throughout and jumps once mid-sequence.
pub fn corpus() -> Vec<CorpusScene> {
    // (transient, appear, disappear)
    let timings: [(bool, usize, usize); 10] = [
        (true, 13, 20),
        (false, 15, 0),
        (true, 23, 30),
        (false, 24, 0),
        (true, 14, 19),
        (false, 35, 0),
        (true, 32, 39),
        (false, 6, 0),
        (true, 4, 10),
        (false, 18, 0),
    ];
    timings
        .iter()
        .enumerate()
        .map(|(i, &(transient, appear, disappear))| {
            let color = TARGET_COLORS[i % TARGET_COLORS.len()];
            let label = format!("{} square", TARGET_NAMES[i % TARGET_NAMES.len()]);
            let vx = if i % 2 == 0 { 1 } else { -1 };
            let x0 = if vx > 0 { 4 } else { 50 };
            let mut events = vec![
                SceneEvent::Appear {
                    object: 1,
                    frame: appear,
                },
                SceneEvent::Teleport {
                    object: 1,
                    frame: appear,
                    to: [x0, 6 + (i as i64 % 3) * 4],
                },
                SceneEvent::Teleport {
                    object: 2,
                    frame: 20 + i % 5,
                    to: [8 + (i as i64 % 4) * 6, 44],
                },
            ];
            if transient {
                events.push(SceneEvent::Disappear {
                    object: 1,
                    frame: disappear,
                });
            }
            let scene = SyntheticScene {
                width: 64,
                height: 64,
                frames: 40,
                background: [90, 90, 96],
                noise: 10,
                objects: vec![
                    SceneObject {
                        id: 1,
                        label: Some(label.clone()),
                        size: [10, 10],
                        color,
                        trajectory: Trajectory::Linear {
                            start: [x0, 6],
                            velocity: [vx, 0],
                        },
                    },
                    SceneObject {
                        id: 2,
                        label: Some("blue bar".into()),
                        size: [14, 6],
                        color: [30, 40, 230],
                        trajectory: Trajectory::Linear {
                            start: [4 + (i as i64 % 3) * 4, 40],
                            velocity: [1, 0],
                        },
                    },
                ],
                events,
            };
            CorpusScene {
                name: format!(
                    "{}-{:02}",
                    if transient { "transient" } else { "late" },
                    i + 1
                ),
                scene,
                query: format!("the {label}"),
                targets: vec![1],
                seed: 1000 + i as u64,
            }
        })
        .collect()
}

/// One swept setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub sweep: &'static str,
    pub setting: String,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Fusion,
    Strategy,
    Keyframes,
}

impl Sweep {
    pub const ALL: [Sweep; 3] = [Sweep::Fusion, Sweep::Strategy, Sweep::Keyframes];

    pub fn name(self) -> &'static str {
        match self {
            Sweep::Fusion => "a",
            Sweep::Strategy => "strategy",
            Sweep::Keyframes => "n_keyframes",
        }
    }

    pub fn variants(self, base: &PipelineConfig) -> Vec<Variant> {
        match self {
            Sweep::Fusion => [0.4, 0.5, 0.6, 0.75]
                .into_iter()
                .map(|a| {
                    let mut config = base.clone();
                    config.fusion.a = a;
                    Variant {
                        sweep: self.name(),
                        setting: format!("{a}"),
                        config,
                    }
                })
                .collect(),
            Sweep::Strategy => [
                (SamplingStrategy::FirstFrame, "first_frame"),
                (SamplingStrategy::Global, "global"),
                (SamplingStrategy::MotionDriven, "motion_driven"),
            ]
            .into_iter()
            .map(|(s, name)| {
                let mut config = base.clone();
                config.sampler.strategy = s;
                Variant {
                    sweep: self.name(),
                    setting: name.to_string(),
                    config,
                }
            })
            .collect(),
            Sweep::Keyframes => (1..=3)
                .map(|n| {
                    let mut config = base.clone();
                    config.n_keyframes = n;
                    Variant {
                        sweep: self.name(),
                        setting: n.to_string(),
                        config,
                    }
                })
                .collect(),
        }
    }
}

impl std::str::FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" | "fusion" => Ok(Sweep::Fusion),
            "strategy" => Ok(Sweep::Strategy),
            "n" | "n_keyframes" | "keyframes" => Ok(Sweep::Keyframes),
            other => Err(format!("unknown sweep {other}; expected a, strategy or n")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub scene: String,
    pub failed: bool,
    pub key_t: Option<usize>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub jf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sweep: String,
    pub setting: String,
    pub scenes: usize,
    pub failures: usize,
    pub mean_j: f64,
    pub mean_f: f64,
    pub jf: f64,
    pub per_scene: Vec<SceneResult>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, sweep: &str, setting: &str) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.sweep == sweep && r.setting == setting)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12}  {:<14}  {:>6}  {:>6}  {:>7}  {:>7}  {:>7}",
            "sweep", "setting", "scenes", "failed", "J", "F", "J&F"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<12}  {:<14}  {:>6}  {:>6}  {:>7.4}  {:>7.4}  {:>7.4}",
                r.sweep, r.setting, r.scenes, r.failures, r.mean_j, r.mean_f, r.jf
            );
        }
        s
    }
}

/// Run one scene; pipeline failures that stem from the backends or from
/// keyframe selection count as an empty prediction.
pub fn run_scene(scene: &CorpusScene, cfg: &PipelineConfig) -> Result<SceneResult, AblationError> {
    let render = scene
        .scene
        .render(scene.seed)
        .map_err(|source| AblationError::Scene {
            scene: scene.name.clone(),
            source,
        })?;
    let backends = Backends::stubs_for(render.annotations.clone(), Some(render.masks.clone()));
    let gt = render.masks.retain_ids(&scene.targets);
    let (pred, failed, key_t) = match run_pipeline(&render.frames, &scene.query, cfg, &backends) {
        Ok(out) => (out.masks, false, Some(out.manifest.decision.key_t)),
        Err(e) if e.exit_code() != 1 => {
            let empty = vec![MaskFrame::empty(gt.mask(1).width(), gt.mask(1).height()); gt.len()];
            (MaskSequence::new(empty).expect("uniform dims"), true, None)
        }
        Err(source) => {
            return Err(AblationError::Pipeline {
                scene: scene.name.clone(),
                source,
            })
        }
    };
    let report: MetricsReport =
        evaluation::evaluate_objects(&pred, &gt, &scene.targets, cfg.ma_window).map_err(
            |source| AblationError::Eval {
                scene: scene.name.clone(),
                source,
            },
        )?;
    Ok(SceneResult {
        scene: scene.name.clone(),
        failed,
        key_t,
        mean_j: report.mean_j,
        mean_f: report.mean_f,
        jf: report.jf,
    })
}

pub fn run_variant(
    corpus: &[CorpusScene],
    variant: &Variant,
) -> Result<AblationRow, AblationError> {
    let per_scene = corpus
        .par_iter()
        .map(|s| run_scene(s, &variant.config))
        .collect::<Result<Vec<_>, _>>()?;
    let n = per_scene.len().max(1) as f64;
    let mean_j = per_scene.iter().map(|r| r.mean_j).sum::<f64>() / n;
    let mean_f = per_scene.iter().map(|r| r.mean_f).sum::<f64>() / n;
    Ok(AblationRow {
        sweep: variant.sweep.to_string(),
        setting: variant.setting.clone(),
        scenes: per_scene.len(),
        failures: per_scene.iter().filter(|r| r.failed).count(),
        mean_j,
        mean_f,
        jf: (mean_j + mean_f) / 2.0,
        per_scene,
    })
}

pub fn ablate(
    corpus: &[CorpusScene],
    base: &PipelineConfig,
    sweeps: &[Sweep],
) -> Result<AblationReport, AblationError> {
    base.validate()
        .map_err(|e| AblationError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for sweep in sweeps {
        for v in sweep.variants(base) {
            rows.push(run_variant(corpus, &v)?);
        }
    }
    Ok(AblationReport { rows })
}
