//! Perception backends: grounder, segmenter and tracker.
//!
//! The pipeline only talks to the three traits below. In-process stubs live
//! in [`stub`]; [`http`] carries the same calls over HTTP/JSON so a remote
//! model server and a local stub are interchangeable.
//!
//! The functions [`ground`], [`segment`] and [`track_init`] wrap the raw trait
//! calls with precondition and response validation. Pipeline code should go
//! through them rather than calling the traits directly.

mod config;
pub mod http;
pub mod prompt;
pub mod stub;
pub mod wire;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame_store::{BoundingBox, Image, MaskFrame, ObjectId};

pub use config::{BackendEndpointConfig, BackendMode, Endpoint};
pub use stub::{BoxFillSegmenter, OracleGrounder, ShiftSearchTracker};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("backend returned {status}: {message}")]
    Remote { status: u16, message: String },
    #[error("out-of-order tracker step: expected frame {expected:?}, got {got}")]
    OutOfOrder { expected: Option<usize>, got: usize },
    #[error("no objects to memorize")]
    NoObjects,
    #[error("unknown tracker session {0}")]
    UnknownSession(String),
    #[error("payload encoding: {0}")]
    Encoding(String),
}

/// Propagation direction of a tracker session.
///
/// `Forward` walks from the keyframe toward frame 1 (decreasing indices) and
/// `Backward` walks toward frame `T` (increasing indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    /// Frame index after `t` in this direction, if any.
    pub fn next(self, t: usize, len: Option<usize>) -> Option<usize> {
        match self {
            Direction::Forward => t.checked_sub(1).filter(|&n| n >= 1),
            Direction::Backward => Some(t + 1).filter(|&n| len.is_none_or(|len| n <= len)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// A frame handed to a backend, with its 1-based index and, when known, the
/// file it was loaded from.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef<'a> {
    pub t: usize,
    pub image: &'a Image,
    pub path: Option<&'a Path>,
}

impl<'a> FrameRef<'a> {
    pub fn new(t: usize, image: &'a Image) -> Self {
        Self {
            t,
            image,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedObject {
    pub id: ObjectId,
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGrounding {
    pub t: usize,
    pub objects: Vec<GroundedObject>,
    /// Frame confidence in `[0, 1]`.
    pub confidence: f64,
    pub reasoning: String,
}

impl FrameGrounding {
    pub fn present_objects(&self) -> impl Iterator<Item = &GroundedObject> {
        self.objects.iter().filter(|o| o.present)
    }
}

/// Grounder output for a set of candidate frames. Serializes to the wire
/// response body of `POST /ground`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundingResult {
    pub frames: Vec<FrameGrounding>,
}

impl GroundingResult {
    pub fn frame(&self, t: usize) -> Option<&FrameGrounding> {
        self.frames.iter().find(|f| f.t == t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub id: ObjectId,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// One frame of a segmentation request.
#[derive(Debug, Clone)]
pub struct SegmentQuery<'a> {
    pub frame: FrameRef<'a>,
    pub boxes: Vec<ObjectBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub id: ObjectId,
    /// Binary layer encoded as a mask whose foreground carries `id`.
    pub mask: MaskFrame,
    /// Predicted IoU in `[0, 1]`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSegmentation {
    pub t: usize,
    pub objects: Vec<ObjectMask>,
    /// Mean predicted IoU over present objects, `0` when there are none.
    pub frame_score: f64,
}

impl FrameSegmentation {
    /// Merge per-object layers into one label grid, lower ids first.
    pub fn combined_mask(&self, width: usize, height: usize) -> MaskFrame {
        let mut out = MaskFrame::empty(width, height);
        let mut layers: Vec<&ObjectMask> = self.objects.iter().collect();
        layers.sort_by_key(|o| o.id);
        for o in layers {
            for y in 0..height {
                for x in 0..width {
                    if o.mask.label(x, y) != 0 {
                        out.set(x, y, o.id);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentationResult {
    pub frames: Vec<FrameSegmentation>,
}

impl SegmentationResult {
    pub fn frame(&self, t: usize) -> Option<&FrameSegmentation> {
        self.frames.iter().find(|f| f.t == t)
    }
}

/// Mean of per-object scores; `0` for a frame without objects.
pub fn frame_score(scores: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = scores
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Multimodal grounding role: locate the queried objects in each frame and
/// report a per-frame confidence.
pub trait Grounder: Send + Sync {
    fn ground(
        &self,
        frames: &[FrameRef<'_>],
        query: &str,
        prompt: &str,
    ) -> Result<GroundingResult, BackendError>;
}

/// Promptable segmentation role: turn boxes into masks with predicted IoU.
pub trait Segmenter: Send + Sync {
    fn segment(&self, queries: &[SegmentQuery<'_>]) -> Result<SegmentationResult, BackendError>;
}

/// Semi-supervised tracking role with stateful sessions.
pub trait Tracker: Send + Sync {
    /// Open a session holding the memory of `(frame, mask)`; returns its id.
    fn init(
        &self,
        frame: FrameRef<'_>,
        mask: &MaskFrame,
        direction: Direction,
    ) -> Result<String, BackendError>;

    /// Propagate the session to `frame`, which must be the next index in the
    /// session's direction.
    fn step(&self, session: &str, frame: FrameRef<'_>) -> Result<MaskFrame, BackendError>;
}

/// The three roles bundled for one pipeline run.
#[derive(Clone)]
pub struct Backends {
    pub grounder: Arc<dyn Grounder>,
    pub segmenter: Arc<dyn Segmenter>,
    pub tracker: Arc<dyn Tracker>,
}

impl Backends {
    /// Use `stubs` for roles in stub mode and an HTTP client for remote ones.
    pub fn from_config(
        cfg: &BackendEndpointConfig,
        stubs: &Backends,
    ) -> Result<Self, BackendError> {
        cfg.validate()?;
        let timeout = std::time::Duration::from_secs_f64(cfg.timeout_secs);
        let client = |ep: &Endpoint| {
            ep.url
                .as_ref()
                .filter(|_| ep.mode == BackendMode::Remote)
                .map(|url| {
                    Arc::new(http::HttpBackend::new(
                        url.clone(),
                        timeout,
                        cfg.retries,
                        cfg.prefer_image_path,
                    ))
                })
        };
        Ok(Self {
            grounder: match client(&cfg.grounder) {
                Some(c) => c,
                None => Arc::clone(&stubs.grounder),
            },
            segmenter: match client(&cfg.segmenter) {
                Some(c) => c,
                None => Arc::clone(&stubs.segmenter),
            },
            tracker: match client(&cfg.tracker) {
                Some(c) => c,
                None => Arc::clone(&stubs.tracker),
            },
        })
    }

    /// Stub backends for a rendered synthetic scene.
    pub fn stubs_for(
        annotations: crate::frame_store::Annotations,
        truth: Option<crate::frame_store::MaskSequence>,
    ) -> Self {
        Self {
            grounder: Arc::new(OracleGrounder::new(annotations)),
            segmenter: Arc::new(match truth {
                Some(t) => BoxFillSegmenter::with_truth(t),
                None => BoxFillSegmenter::new(),
            }),
            tracker: Arc::new(ShiftSearchTracker::default()),
        }
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends").finish_non_exhaustive()
    }
}

fn check_requested(
    what: &str,
    requested: &[usize],
    returned: impl Iterator<Item = usize>,
) -> Result<(), BackendError> {
    let mut seen = BTreeSet::new();
    for t in returned {
        if !seen.insert(t) {
            return Err(BackendError::Schema(format!(
                "{what}: duplicate entry for frame {t}"
            )));
        }
        if !requested.contains(&t) {
            return Err(BackendError::Schema(format!(
                "{what}: unrequested frame {t}"
            )));
        }
    }
    if let Some(missing) = requested.iter().find(|t| !seen.contains(t)) {
        return Err(BackendError::Schema(format!(
            "{what}: missing frame {missing}"
        )));
    }
    Ok(())
}

/// Ground `query` in `frames`, validating and normalizing the response:
/// entries are reordered to match `frames`, boxes clamped to the image.
pub fn ground(
    grounder: &dyn Grounder,
    frames: &[FrameRef<'_>],
    query: &str,
    prompt: &str,
) -> Result<GroundingResult, BackendError> {
    if frames.is_empty() {
        return Err(BackendError::Precondition("empty frame list".into()));
    }
    if query.trim().is_empty() {
        return Err(BackendError::Precondition("empty query".into()));
    }
    let raw = grounder.ground(frames, query, prompt)?;
    let requested: Vec<usize> = frames.iter().map(|f| f.t).collect();
    check_requested("grounding", &requested, raw.frames.iter().map(|f| f.t))?;

    let mut out = Vec::with_capacity(frames.len());
    for fr in frames {
        let mut g = raw.frame(fr.t).cloned().expect("checked above");
        if !(0.0..=1.0).contains(&g.confidence) {
            return Err(BackendError::Schema(format!(
                "confidence out of range: {} for frame {}",
                g.confidence, fr.t
            )));
        }
        let mut ids = BTreeSet::new();
        for o in &mut g.objects {
            if o.id == 0 {
                return Err(BackendError::Schema(format!(
                    "object id 0 in frame {}",
                    fr.t
                )));
            }
            if !ids.insert(o.id) {
                return Err(BackendError::Schema(format!(
                    "duplicate object id {} in frame {}",
                    o.id, fr.t
                )));
            }
            o.bbox = o.bbox.clamp(fr.image.width(), fr.image.height());
            if o.present && o.bbox.is_empty() {
                o.present = false;
            }
        }
        out.push(g);
    }
    Ok(GroundingResult { frames: out })
}

/// Segment the present objects of `grounding`, one request covering every
/// frame.
pub fn segment(
    segmenter: &dyn Segmenter,
    frames: &[FrameRef<'_>],
    grounding: &GroundingResult,
) -> Result<SegmentationResult, BackendError> {
    let requested: Vec<usize> = frames.iter().map(|f| f.t).collect();
    check_requested(
        "grounding coverage",
        &requested,
        grounding.frames.iter().map(|f| f.t),
    )
    .map_err(|e| BackendError::Precondition(e.to_string()))?;

    let queries: Vec<SegmentQuery<'_>> = frames
        .iter()
        .map(|fr| SegmentQuery {
            frame: *fr,
            boxes: grounding
                .frame(fr.t)
                .expect("checked above")
                .present_objects()
                .map(|o| ObjectBox {
                    id: o.id,
                    bbox: o.bbox,
                })
                .collect(),
        })
        .collect();
    let raw = segmenter.segment(&queries)?;
    check_requested("segmentation", &requested, raw.frames.iter().map(|f| f.t))?;

    let mut out = Vec::with_capacity(frames.len());
    for q in &queries {
        let mut f = raw.frame(q.frame.t).cloned().expect("checked above");
        let (w, h) = (q.frame.image.width(), q.frame.image.height());
        for o in &f.objects {
            if o.mask.width() != w || o.mask.height() != h {
                return Err(BackendError::Schema(format!(
                    "mask for object {} in frame {} is {}x{}, frame is {w}x{h}",
                    o.id,
                    f.t,
                    o.mask.width(),
                    o.mask.height()
                )));
            }
            if !(0.0..=1.0).contains(&o.score) {
                return Err(BackendError::Schema(format!(
                    "iou score out of range: {} for object {} in frame {}",
                    o.score, o.id, f.t
                )));
            }
        }
        f.objects.sort_by_key(|o| o.id);
        f.frame_score = frame_score(f.objects.iter().map(|o| o.score));
        out.push(f);
    }
    Ok(SegmentationResult { frames: out })
}

/// Client-side handle on a tracker session; enforces consecutive stepping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackerSession {
    pub id: String,
    pub direction: Direction,
    pub init_t: usize,
    object_ids: Vec<ObjectId>,
    next_t: Option<usize>,
}

impl TrackerSession {
    pub fn expected_next(&self) -> Option<usize> {
        self.next_t
    }

    pub fn object_ids(&self) -> &[ObjectId] {
        &self.object_ids
    }

    pub fn step(
        &mut self,
        tracker: &dyn Tracker,
        frame: FrameRef<'_>,
    ) -> Result<MaskFrame, BackendError> {
        if self.next_t != Some(frame.t) {
            return Err(BackendError::OutOfOrder {
                expected: self.next_t,
                got: frame.t,
            });
        }
        let mask = tracker.step(&self.id, frame)?;
        if mask.width() != frame.image.width() || mask.height() != frame.image.height() {
            return Err(BackendError::Schema(format!(
                "tracker mask for frame {} has wrong dimensions",
                frame.t
            )));
        }
        if let Some(bad) = mask
            .object_ids()
            .into_iter()
            .find(|id| !self.object_ids.contains(id))
        {
            return Err(BackendError::Schema(format!(
                "tracker introduced unknown object id {bad} at frame {}",
                frame.t
            )));
        }
        self.next_t = self.direction.next(frame.t, None);
        Ok(mask)
    }
}

/// Open a tracker session memorizing `mask` on `frame`.
pub fn track_init(
    tracker: &dyn Tracker,
    frame: FrameRef<'_>,
    mask: &MaskFrame,
    direction: Direction,
) -> Result<TrackerSession, BackendError> {
    if mask.is_background_only() {
        return Err(BackendError::NoObjects);
    }
    if mask.width() != frame.image.width() || mask.height() != frame.image.height() {
        return Err(BackendError::Precondition(
            "mask and frame dimensions differ".into(),
        ));
    }
    let id = tracker.init(frame, mask, direction)?;
    Ok(TrackerSession {
        id,
        direction,
        init_t: frame.t,
        object_ids: mask.object_ids(),
        next_t: direction.next(frame.t, None),
    })
}
