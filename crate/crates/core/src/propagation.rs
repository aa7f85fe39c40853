//! Split the sequence at the keyframe and propagate the key mask both ways.
//!
//! The forward leg walks from `key - 1` down to frame 1, the backward leg
//! from `key + 1` up to `T`. Each non-empty leg gets its own tracker session
//! opened on `(I_key, M_key)`, and the two legs run on separate threads. The
//! keyframe itself always carries `M_key` unchanged.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, BackendError, Direction, FrameRef, Tracker};
use crate::frame_store::{FrameSequence, MaskFrame, MaskSequence};

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("key frame {key} is outside 1..={len}")]
    KeyOutOfRange { key: usize, len: usize },
    #[error("no keyframes given")]
    NoKeys,
    #[error("duplicate keyframe {0}")]
    DuplicateKey(usize),
    #[error("key mask for frame {key} is {mask_w}x{mask_h}, frames are {frame_w}x{frame_h}")]
    MaskMismatch {
        key: usize,
        mask_w: usize,
        mask_h: usize,
        frame_w: usize,
        frame_h: usize,
    },
    #[error("{} leg from key {key} failed after frame {last_completed}: {source}", direction.as_str())]
    Tracker {
        direction: Direction,
        key: usize,
        /// Last frame of this leg with a finished mask (the key itself if the
        /// leg failed on its first step).
        last_completed: usize,
        #[source]
        source: BackendError,
    },
}

/// How a sequence of `len` frames splits around `key`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationPlan {
    pub key: usize,
    pub len: usize,
    /// `key - 1` down to 1.
    pub forward: Vec<usize>,
    /// `key + 1` up to `len`.
    pub backward: Vec<usize>,
}

pub fn plan(len: usize, key: usize) -> Result<PropagationPlan, PropagationError> {
    span_plan(key, 1, len, len)
}

fn span_plan(
    key: usize,
    lo: usize,
    hi: usize,
    len: usize,
) -> Result<PropagationPlan, PropagationError> {
    if key < 1 || key > len || key < lo || key > hi {
        return Err(PropagationError::KeyOutOfRange { key, len });
    }
    Ok(PropagationPlan {
        key,
        len,
        forward: (lo..key).rev().collect(),
        backward: (key + 1..=hi).collect(),
    })
}

impl PropagationPlan {
    pub fn leg(&self, direction: Direction) -> &[usize] {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }
}

/// Summary of one leg for the run manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegSummary {
    pub key: usize,
    pub direction: Direction,
    /// First and last frame of the leg in walking order.
    pub first: usize,
    pub last: usize,
    pub steps: usize,
}

/// Wall-clock cost of one tracker step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLatency {
    pub t: usize,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOutput {
    pub masks: MaskSequence,
    pub plans: Vec<PropagationPlan>,
    pub legs: Vec<LegSummary>,
    /// Per-frame tracker latency, frame order.
    pub latency: Vec<StepLatency>,
    pub sessions_opened: usize,
}

struct LegResult {
    summary: LegSummary,
    masks: Vec<(usize, MaskFrame)>,
    latency: Vec<StepLatency>,
}

fn run_leg(
    seq: &FrameSequence,
    tracker: &dyn Tracker,
    key: usize,
    key_mask: &MaskFrame,
    direction: Direction,
    frames: &[usize],
) -> Result<LegResult, PropagationError> {
    let fail = |last_completed, source| PropagationError::Tracker {
        direction,
        key,
        last_completed,
        source,
    };
    let key_frame = FrameRef {
        t: key,
        image: seq.frame(key),
        path: seq.source(key),
    };
    let mut session =
        backend::track_init(tracker, key_frame, key_mask, direction).map_err(|e| fail(key, e))?;
    let mut masks = Vec::with_capacity(frames.len());
    let mut latency = Vec::with_capacity(frames.len());
    let mut last = key;
    for &t in frames {
        let frame = FrameRef {
            t,
            image: seq.frame(t),
            path: seq.source(t),
        };
        let start = Instant::now();
        let mask = session.step(tracker, frame).map_err(|e| fail(last, e))?;
        latency.push(StepLatency {
            t,
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        masks.push((t, mask));
        last = t;
    }
    Ok(LegResult {
        summary: LegSummary {
            key,
            direction,
            first: frames[0],
            last,
            steps: frames.len(),
        },
        masks,
        latency,
    })
}

/// Single-keyframe propagation.
pub fn propagate(
    seq: &FrameSequence,
    key: usize,
    key_mask: &MaskFrame,
    tracker: &dyn Tracker,
) -> Result<PropagationOutput, PropagationError> {
    propagate_multi(seq, &[(key, key_mask.clone())], tracker)
}

/// Owning keyframe of every frame: the nearest key, ties to the lower one.
pub fn ownership(len: usize, keys: &[usize]) -> Vec<usize> {
    (1..=len)
        .map(|t| {
            *keys
                .iter()
                .min_by_key(|&&k| (k.abs_diff(t), k))
                .expect("at least one key")
        })
        .collect()
}

/// Propagate from several keyframes, each covering only the frames it owns.
pub fn propagate_multi(
    seq: &FrameSequence,
    keys: &[(usize, MaskFrame)],
    tracker: &dyn Tracker,
) -> Result<PropagationOutput, PropagationError> {
    let len = seq.len();
    if keys.is_empty() {
        return Err(PropagationError::NoKeys);
    }
    let mut sorted: Vec<&(usize, MaskFrame)> = keys.iter().collect();
    sorted.sort_by_key(|(k, _)| *k);
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(PropagationError::DuplicateKey(w[0].0));
        }
    }
    for (k, m) in &sorted {
        if *k < 1 || *k > len {
            return Err(PropagationError::KeyOutOfRange { key: *k, len });
        }
        if m.width() != seq.width() || m.height() != seq.height() {
            return Err(PropagationError::MaskMismatch {
                key: *k,
                mask_w: m.width(),
                mask_h: m.height(),
                frame_w: seq.width(),
                frame_h: seq.height(),
            });
        }
    }

    let key_ts: Vec<usize> = sorted.iter().map(|(k, _)| *k).collect();
    let owner = ownership(len, &key_ts);
    let mut plans = Vec::with_capacity(sorted.len());
    for (k, _) in &sorted {
        let lo = owner.iter().position(|o| o == k).expect("key owns itself") + 1;
        let hi = owner.iter().rposition(|o| o == k).expect("key owns itself") + 1;
        plans.push(span_plan(*k, lo, hi, len)?);
    }

    // (key index, direction) for every non-empty leg, in a fixed order.
    let legs: Vec<(usize, Direction)> = plans
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            [Direction::Forward, Direction::Backward]
                .into_iter()
                .filter(move |&d| !p.leg(d).is_empty())
                .map(move |d| (i, d))
        })
        .collect();

    let results: Vec<Result<LegResult, PropagationError>> = std::thread::scope(|s| {
        let handles: Vec<_> = legs
            .iter()
            .map(|&(i, d)| {
                let plan = &plans[i];
                let mask = &sorted[i].1;
                s.spawn(move || run_leg(seq, tracker, plan.key, mask, d, plan.leg(d)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("propagation leg panicked"))
            .collect()
    });

    let mut out: Vec<Option<MaskFrame>> = vec![None; len];
    for (k, m) in &sorted {
        out[k - 1] = Some(m.clone());
    }
    let mut summaries = Vec::with_capacity(results.len());
    let mut latency = Vec::new();
    for r in results {
        let r = r?;
        for (t, m) in r.masks {
            out[t - 1] = Some(m);
        }
        latency.extend(r.latency);
        summaries.push(r.summary);
    }
    latency.sort_by_key(|l| l.t);
    let masks = out
        .into_iter()
        .map(|m| m.expect("plans cover every frame"))
        .collect();
    Ok(PropagationOutput {
        masks: MaskSequence::new(masks).expect("all masks share the sequence dimensions"),
        plans,
        sessions_opened: summaries.len(),
        legs: summaries,
        latency,
    })
}
