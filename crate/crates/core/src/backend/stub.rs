//! Deterministic in-process backends driven by synthetic-scene ground truth.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::{
    frame_score, BackendError, Direction, FrameGrounding, FrameRef, FrameSegmentation,
    GroundedObject, Grounder, GroundingResult, ObjectMask, SegmentQuery, SegmentationResult,
    Segmenter, Tracker,
};
use crate::frame_store::{Annotations, BoundingBox, MaskFrame, MaskSequence, ObjectId};

pub const ORACLE_REASONING: &str = "oracle grounder: boxes and visibility read from annotations";

/// Confidence of one object: 1.0 fully visible, 0.5 clipped, 0.1 absent.
pub fn visibility_confidence(visible: bool, truncated: bool) -> f64 {
    match (visible, truncated) {
        (true, false) => 1.0,
        (true, true) => 0.5,
        (false, _) => 0.1,
    }
}

/// Reads boxes and visibility straight from scene annotations.
///
/// An object is queried when its label occurs in the query
/// (case-insensitive) or the query names it as `object <id>`. Annotation ids
/// are kept as-is.
#[derive(Debug, Clone)]
pub struct OracleGrounder {
    annotations: Annotations,
}

impl OracleGrounder {
    pub fn new(annotations: Annotations) -> Self {
        Self { annotations }
    }

    pub fn matched_ids(&self, query: &str) -> Vec<ObjectId> {
        let q = query.to_lowercase();
        let mut ids: Vec<ObjectId> = self
            .annotations
            .objects
            .iter()
            .filter(|o| {
                let by_label = o
                    .label
                    .as_deref()
                    .map(str::to_lowercase)
                    .is_some_and(|l| !l.trim().is_empty() && q.contains(&l));
                by_label || mentions_id(&q, o.id)
            })
            .map(|o| o.id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn frame(&self, t: usize, ids: &[ObjectId]) -> FrameGrounding {
        let mut objects = Vec::with_capacity(ids.len());
        let mut confidences = Vec::with_capacity(ids.len());
        for &id in ids {
            let ann = self.annotations.frame(id, t);
            let (visible, truncated, bbox) = match ann {
                Some(a) if a.visible && a.bbox.is_some() => (true, a.truncated, a.bbox.unwrap()),
                _ => (false, false, BoundingBox::new(0, 0, 0, 0)),
            };
            confidences.push(visibility_confidence(visible, truncated));
            let label = self
                .annotations
                .object(id)
                .and_then(|o| o.label.clone())
                .unwrap_or_else(|| format!("object {id}"));
            objects.push(GroundedObject {
                id,
                label,
                bbox,
                present: visible,
            });
        }
        let confidence = if confidences.is_empty() {
            visibility_confidence(false, false)
        } else {
            confidences.iter().sum::<f64>() / confidences.len() as f64
        };
        FrameGrounding {
            t,
            objects,
            confidence,
            reasoning: ORACLE_REASONING.to_string(),
        }
    }
}

fn mentions_id(query: &str, id: ObjectId) -> bool {
    let needle = format!("object {id}");
    query.match_indices(&needle).any(|(i, _)| {
        !query[i + needle.len()..]
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_digit())
    })
}

impl Grounder for OracleGrounder {
    fn ground(
        &self,
        frames: &[FrameRef<'_>],
        query: &str,
        _prompt: &str,
    ) -> Result<GroundingResult, BackendError> {
        let ids = self.matched_ids(query);
        Ok(GroundingResult {
            frames: frames.iter().map(|f| self.frame(f.t, &ids)).collect(),
        })
    }
}

/// Fills each box; predicted IoU is the exact IoU against ground truth when
/// available, otherwise 1.
#[derive(Debug, Clone, Default)]
pub struct BoxFillSegmenter {
    truth: Option<MaskSequence>,
}

impl BoxFillSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_truth(truth: MaskSequence) -> Self {
        Self { truth: Some(truth) }
    }
}

/// IoU of two binary layers; two empty layers count as a perfect match.
pub(crate) fn layer_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

impl Segmenter for BoxFillSegmenter {
    fn segment(&self, queries: &[SegmentQuery<'_>]) -> Result<SegmentationResult, BackendError> {
        let mut frames = Vec::with_capacity(queries.len());
        for q in queries {
            let (w, h) = (q.frame.image.width(), q.frame.image.height());
            let truth = self
                .truth
                .as_ref()
                .filter(|s| q.frame.t >= 1 && q.frame.t <= s.len())
                .map(|s| s.mask(q.frame.t));
            let objects: Vec<ObjectMask> = q
                .boxes
                .iter()
                .map(|b| {
                    let mut mask = MaskFrame::empty(w, h);
                    mask.fill_box(b.bbox.clamp(w, h), b.id);
                    let score = match truth {
                        Some(gt) if gt.width() == w && gt.height() == h => {
                            layer_iou(&mask.layer(b.id), &gt.layer(b.id))
                        }
                        _ => 1.0,
                    };
                    ObjectMask {
                        id: b.id,
                        mask,
                        score,
                    }
                })
                .collect();
            frames.push(FrameSegmentation {
                t: q.frame.t,
                frame_score: frame_score(objects.iter().map(|o| o.score)),
                objects,
            });
        }
        Ok(SegmentationResult { frames })
    }
}

#[derive(Debug)]
struct Session {
    direction: Direction,
    last_t: usize,
    mask: MaskFrame,
    colors: Vec<(ObjectId, [u8; 3])>,
}

/// Exhaustive integer-shift tracker.
///
/// Each object keeps the most frequent colour under its initial mask. A step
/// tries every translation with `|dx|, |dy| <= radius` and keeps the one
/// under which the most shifted mask pixels land on that colour; ties go to
/// the smallest `|dx| + |dy|`, then `dy`, then `dx`. An object with no match
/// anywhere is lost and its mask goes empty.
#[derive(Debug)]
pub struct ShiftSearchTracker {
    radius: i64,
    counter: AtomicU64,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl Default for ShiftSearchTracker {
    fn default() -> Self {
        Self::new(8)
    }
}

impl ShiftSearchTracker {
    pub fn new(radius: usize) -> Self {
        Self {
            radius: radius as i64,
            counter: AtomicU64::new(0),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn radius(&self) -> usize {
        self.radius as usize
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }

    /// Best shift for one object: `(dx, dy, matches)`.
    pub fn search(
        &self,
        frame: &crate::frame_store::Image,
        pixels: &[(usize, usize)],
        color: [u8; 3],
    ) -> (i64, i64, usize) {
        let (w, h) = (frame.width() as i64, frame.height() as i64);
        let r = self.radius;
        let mut best = (0i64, 0i64, 0usize);
        let mut best_key = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let count = pixels
                    .iter()
                    .filter(|&&(x, y)| {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        nx >= 0
                            && ny >= 0
                            && nx < w
                            && ny < h
                            && frame.pixel(nx as usize, ny as usize) == color
                    })
                    .count();
                // Larger count wins; otherwise smaller (|dx|+|dy|, dy, dx).
                let key = (std::cmp::Reverse(count), dx.abs() + dy.abs(), dy, dx);
                if best_key.is_none_or(|k| key < k) {
                    best_key = Some(key);
                    best = (dx, dy, count);
                }
            }
        }
        best
    }
}

fn dominant_color(frame: &crate::frame_store::Image, mask: &MaskFrame, id: ObjectId) -> [u8; 3] {
    let mut counts: BTreeMap<[u8; 3], usize> = BTreeMap::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.label(x, y) == id {
                *counts.entry(frame.pixel(x, y)).or_default() += 1;
            }
        }
    }
    // Highest count; the smallest colour among equals.
    let mut best = ([0u8; 3], 0usize);
    for (c, n) in counts {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0
}

impl Tracker for ShiftSearchTracker {
    fn init(
        &self,
        frame: FrameRef<'_>,
        mask: &MaskFrame,
        direction: Direction,
    ) -> Result<String, BackendError> {
        if mask.is_background_only() {
            return Err(BackendError::NoObjects);
        }
        if mask.width() != frame.image.width() || mask.height() != frame.image.height() {
            return Err(BackendError::Precondition(
                "mask and frame dimensions differ".into(),
            ));
        }
        let colors = mask
            .object_ids()
            .into_iter()
            .map(|id| (id, dominant_color(frame.image, mask, id)))
            .collect();
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("shift-{n:06}");
        let session = Session {
            direction,
            last_t: frame.t,
            mask: mask.clone(),
            colors,
        };
        self.sessions
            .lock()
            .expect("session map poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    fn step(&self, session: &str, frame: FrameRef<'_>) -> Result<MaskFrame, BackendError> {
        let handle = self
            .sessions
            .lock()
            .expect("session map poisoned")
            .get(session)
            .cloned()
            .ok_or_else(|| BackendError::UnknownSession(session.to_string()))?;
        let mut s = handle.lock().expect("session poisoned");
        let expected = s.direction.next(s.last_t, None);
        if expected != Some(frame.t) {
            return Err(BackendError::OutOfOrder {
                expected,
                got: frame.t,
            });
        }
        let (w, h) = (s.mask.width(), s.mask.height());
        if frame.image.width() != w || frame.image.height() != h {
            return Err(BackendError::Precondition(
                "frame dimensions differ from session".into(),
            ));
        }
        let mut next = MaskFrame::empty(w, h);
        for &(id, color) in &s.colors {
            let pixels: Vec<(usize, usize)> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .filter(|&(x, y)| s.mask.label(x, y) == id)
                .collect();
            if pixels.is_empty() {
                continue;
            }
            let (dx, dy, count) = self.search(frame.image, &pixels, color);
            if count == 0 {
                continue;
            }
            for (x, y) in pixels {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    next.set(nx as usize, ny as usize, id);
                }
            }
        }
        s.mask = next.clone();
        s.last_t = frame.t;
        Ok(next)
    }
}
