//! End-to-end run: sample candidates, ground and segment them, pick the
//! keyframe, record its object memory and propagate its mask.
//!
//! Nothing here learns or updates weights; every stage is a pure function of
//! its inputs and the backend replies.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{
    self, prompt, BackendEndpointConfig, BackendError, BackendMode, Backends, FrameRef,
    GroundingResult, SegmentationResult,
};
use crate::frame_store::{
    write_masks, BoundingBox, FrameSequence, FrameStoreError, MaskSequence, ObjectId,
};
use crate::keyframe::{self, DecisionRecord, FusionConfig, KeyframeError};
use crate::memory::{self, MemoryBank, MemoryError, ObjectMemoryEntry};
use crate::propagation::{self, LegSummary, PropagationError, PropagationPlan, StepLatency};
use crate::sampler::{self, CandidateSet, SamplerConfig, SamplerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Keyframe(#[from] KeyframeError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    FrameStore(#[from] FrameStoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code: 2 for backend failures, 3 when no keyframe with a
    /// non-empty mask could be found, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Backend(_)
            | PipelineError::Propagation(PropagationError::Tracker { .. }) => 2,
            PipelineError::Keyframe(
                KeyframeError::NoViableKeyframe { .. } | KeyframeError::EmptyKeyMask { .. },
            ) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sampler: SamplerConfig,
    pub fusion: FusionConfig,
    pub backends: BackendEndpointConfig,
    /// Grounder prompt template; the built-in one when unset.
    pub prompt_template: Option<PathBuf>,
    pub n_keyframes: usize,
    /// Moving-average window for stability reports.
    pub ma_window: usize,
    pub output_dir: Option<PathBuf>,
    /// Runner-up promotions allowed when a key mask comes back empty.
    pub max_fallbacks: usize,
    /// Runs whose best fused score falls below this are flagged.
    pub low_confidence_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            fusion: FusionConfig::default(),
            backends: BackendEndpointConfig::default(),
            prompt_template: None,
            n_keyframes: 1,
            ma_window: 5,
            output_dir: None,
            max_fallbacks: 3,
            low_confidence_threshold: 0.2,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.sampler.validate()?;
        self.fusion.validate()?;
        self.backends
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.n_keyframes == 0 {
            return Err(PipelineError::Config("n_keyframes must be >= 1".into()));
        }
        if self.ma_window == 0 || self.ma_window.is_multiple_of(2) {
            return Err(PipelineError::Config(format!(
                "ma_window must be odd and >= 1, got {}",
                self.ma_window
            )));
        }
        Ok(())
    }

    /// Override one field by dotted path, e.g. `fusion.a=0.75` or
    /// `sampler.anchor_interval=auto`. The value is read as JSON when it
    /// parses, otherwise as a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let parsed =
            serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.into()));
        let parts: Vec<&str> = key.split('.').collect();
        let (leaf, parents) = parts.split_last().expect("split yields at least one part");
        let mut node = &mut doc;
        for p in parents {
            node = node
                .get_mut(*p)
                .filter(|n| n.is_object())
                .ok_or_else(|| PipelineError::Config(format!("unknown config key {key}")))?;
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| PipelineError::Config(format!("unknown config key {key}")))?;
        obj.insert((*leaf).to_string(), parsed);
        let cfg: Self = serde_json::from_value(doc)
            .map_err(|e| PipelineError::Config(format!("{key}={value}: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn prompt(&self, query: &str) -> Result<String, PipelineError> {
        let template = match &self.prompt_template {
            Some(p) => prompt::load_template(p).map_err(|e| {
                PipelineError::Config(format!("prompt template {}: {e}", p.display()))
            })?,
            None => prompt::DEFAULT_TEMPLATE.to_string(),
        };
        Ok(prompt::render(&template, query))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub id: String,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
}

/// Per-object segmentation summary (the masks themselves are not stored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedObject {
    pub id: ObjectId,
    pub score: f64,
    pub area: usize,
    #[serde(rename = "box")]
    pub bbox: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedFrame {
    pub t: usize,
    pub objects: Vec<SegmentedObject>,
    pub frame_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendsUsed {
    pub grounder: String,
    pub segmenter: String,
    pub tracker: String,
}

impl BackendsUsed {
    fn from_config(cfg: &BackendEndpointConfig) -> Self {
        let name = |ep: &backend::Endpoint| match ep.mode {
            BackendMode::Stub => "stub".to_string(),
            BackendMode::Remote => ep.url.clone().unwrap_or_default(),
        };
        Self {
            grounder: name(&cfg.grounder),
            segmenter: name(&cfg.segmenter),
            tracker: name(&cfg.tracker),
        }
    }
}

/// Wall-clock figures; everything time-dependent in the manifest lives here.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub sample_ms: f64,
    pub ground_ms: f64,
    pub segment_ms: f64,
    pub select_ms: f64,
    pub propagate_ms: f64,
    pub total_ms: f64,
    pub tracker_latency: Vec<StepLatency>,
}

/// Audit record of one run: enough to re-derive the keyframe decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub sequence: SequenceInfo,
    pub query: String,
    pub config: PipelineConfig,
    pub candidates: CandidateSet,
    /// Motion score per frame (anchors and unscored frames are null).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_scores: Option<Vec<Option<f64>>>,
    pub grounding: GroundingResult,
    pub segmentation: Vec<SegmentedFrame>,
    pub decision: DecisionRecord,
    pub keys: Vec<usize>,
    pub rejected_keys: Vec<usize>,
    pub runner_ups: Vec<usize>,
    pub low_confidence: bool,
    pub memory: Vec<ObjectMemoryEntry>,
    pub plans: Vec<PropagationPlan>,
    pub legs: Vec<LegSummary>,
    /// How frames are shared between several keyframes, when there are more
    /// than one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_keyframe_merge: Option<String>,
    pub backends: BackendsUsed,
    pub timing: Timing,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub masks: MaskSequence,
    pub manifest: RunManifest,
}

impl PipelineOutput {
    /// Write `masks/` and `manifest.json` under `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_masks(&self.masks, dir.join("masks"))?;
        std::fs::write(dir.join("manifest.json"), self.manifest.to_json())?;
        Ok(())
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn frame_ref(seq: &FrameSequence, t: usize) -> FrameRef<'_> {
    FrameRef {
        t,
        image: seq.frame(t),
        path: seq.source(t),
    }
}

fn summarize(seg: &SegmentationResult) -> Vec<SegmentedFrame> {
    seg.frames
        .iter()
        .map(|f| SegmentedFrame {
            t: f.t,
            objects: f
                .objects
                .iter()
                .map(|o| SegmentedObject {
                    id: o.id,
                    score: o.score,
                    area: o.mask.area(o.id),
                    bbox: o.mask.bbox(o.id),
                })
                .collect(),
            frame_score: f.frame_score,
        })
        .collect()
}

pub fn run_pipeline(
    seq: &FrameSequence,
    query: &str,
    cfg: &PipelineConfig,
    backends: &Backends,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let total = Instant::now();
    let mut timing = Timing::default();

    let start = Instant::now();
    let (candidates, motion) = sampler::sample_with_scores(seq, &cfg.sampler)?;
    timing.sample_ms = ms(start);
    let cand_ts = candidates.indices();
    let frames: Vec<FrameRef<'_>> = cand_ts.iter().map(|&t| frame_ref(seq, t)).collect();

    let start = Instant::now();
    let prompt = cfg.prompt(query)?;
    let grounding = backend::ground(backends.grounder.as_ref(), &frames, query, &prompt)?;
    timing.ground_ms = ms(start);

    let start = Instant::now();
    let segmentation = backend::segment(backends.segmenter.as_ref(), &frames, &grounding)?;
    timing.segment_ms = ms(start);

    let start = Instant::now();
    let scores = keyframe::score_candidates(&cand_ts, &grounding, &segmentation, &cfg.fusion)?;
    let decision = keyframe::select_with_fallback(
        &scores,
        &segmentation,
        cfg.n_keyframes,
        cfg.fusion.a,
        (seq.width(), seq.height()),
        cfg.max_fallbacks,
    )?;
    timing.select_ms = ms(start);

    let bank = MemoryBank::new();
    for (&t, mask) in decision.keys.iter().zip(&decision.key_masks) {
        bank.extend(memory::memorize(
            seq.frame(t),
            t,
            mask,
            &cfg.sampler.encoder,
        )?)?;
    }
    let before = bank.snapshot();

    let start = Instant::now();
    let keyed: Vec<(usize, _)> = decision
        .keys
        .iter()
        .copied()
        .zip(decision.key_masks.iter().cloned())
        .collect();
    let prop = propagation::propagate_multi(seq, &keyed, backends.tracker.as_ref())?;
    timing.propagate_ms = ms(start);
    debug_assert_eq!(before, bank.snapshot());

    let mut config = cfg.clone();
    config.output_dir = None;
    timing.tracker_latency = prop.latency;
    timing.total_ms = ms(total);
    let manifest = RunManifest {
        sequence: SequenceInfo {
            id: seq.id().to_string(),
            frames: seq.len(),
            width: seq.width(),
            height: seq.height(),
        },
        query: query.to_string(),
        backends: BackendsUsed::from_config(&cfg.backends),
        config,
        candidates,
        motion_scores: motion.map(|m| m.scores),
        grounding,
        segmentation: summarize(&segmentation),
        low_confidence: decision.best_score() < cfg.low_confidence_threshold,
        decision: decision.record(),
        keys: decision.keys.clone(),
        rejected_keys: decision.rejected.clone(),
        runner_ups: decision.runner_ups.clone(),
        memory: before.to_vec(),
        plans: prop.plans,
        legs: prop.legs,
        multi_keyframe_merge: (decision.keys.len() > 1).then(|| "nearest_keyframe".to_string()),
        timing,
    };
    Ok(PipelineOutput {
        masks: prop.masks,
        manifest,
    })
}
