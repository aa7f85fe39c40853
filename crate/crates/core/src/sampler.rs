//! Motion-driven keyframe candidate sampling.
//!
//! Anchors are placed every `interval` frames. Each non-anchor frame is
//! scored against its segment's anchor by a feature difference `D`, weighted
//! by a Gaussian over the frame's position inside the segment:
//!
//! ```text
//! score(j) = exp(-(j - n/2)^2 / (2 sigma^2)) * D(anchor, frame_j),   j = 2..=n
//! ```
//!
//! where `n` is the segment length including its anchor (`j = 1`). All
//! non-anchor scores go into one global queue; the top `K` percent (capped at
//! `max_candidates`) join the anchors as candidates.

use std::fmt;

use rayon::prelude::*;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::encoder::{EncoderConfig, EncoderError, FeatureMap, FrameEncoder};
use crate::frame_store::FrameSequence;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("feature map shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sigma must be > 0, got {0}")]
    InvalidSigma(f64),
    #[error("segment of length {n} expects {expected} member features, got {got}")]
    MemberCount {
        n: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// One anchor and the frames that follow it up to the next anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub anchor: usize,
    pub members: Vec<usize>,
}

#[allow(clippy::len_without_is_empty)]
impl Segment {
    /// Segment length `n`, counting the anchor as `j = 1`.
    pub fn len(&self) -> usize {
        1 + self.members.len()
    }

    /// Segment-local index `j` of frame `t` (the anchor is `j = 1`).
    pub fn local_index(&self, t: usize) -> usize {
        t - self.anchor + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnchorSet {
    pub interval: usize,
    pub segments: Vec<Segment>,
}

impl AnchorSet {
    pub fn anchors(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.anchor).collect()
    }

    pub fn is_anchor(&self, t: usize) -> bool {
        t >= 1 && (t - 1).is_multiple_of(self.interval)
    }
}

/// `floor(T / 4)`, clamped to at least 1.
pub fn default_interval(len: usize) -> usize {
    (len / 4).max(1)
}

/// Anchors at `1, 1 + interval, 1 + 2 interval, ...`; members are the frames
/// strictly between consecutive anchors (or up to `T`).
pub fn place_anchors(len: usize, interval: usize) -> AnchorSet {
    let interval = interval.max(1);
    let segments = (1..=len)
        .step_by(interval)
        .map(|anchor| Segment {
            anchor,
            members: (anchor + 1..(anchor + interval).min(len + 1)).collect(),
        })
        .collect();
    AnchorSet { interval, segments }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceMetric {
    /// `1 - mean cell cosine similarity`.
    #[default]
    Cosine,
    /// Mean absolute difference over all feature values.
    MeanAbsolute,
}

fn check_shape(a: &FeatureMap, b: &FeatureMap) -> Result<(), SamplerError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(SamplerError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.grid_h(),
            a.grid_w(),
            a.channels(),
            b.grid_h(),
            b.grid_w(),
            b.channels()
        )))
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        // Covers the all-zero pair and avoids rounding on identical cells.
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Feature difference `D = 1 - mean_cells cos(a_cell, b_cell)`, in `[0, 2]`.
pub fn difference(a: &FeatureMap, b: &FeatureMap) -> Result<f64, SamplerError> {
    difference_with(DifferenceMetric::Cosine, a, b)
}

pub fn difference_with(
    metric: DifferenceMetric,
    a: &FeatureMap,
    b: &FeatureMap,
) -> Result<f64, SamplerError> {
    check_shape(a, b)?;
    let d = match metric {
        DifferenceMetric::Cosine => {
            let cells = a.grid_h() * a.grid_w();
            let sim: f64 = a.cells().zip(b.cells()).map(|(x, y)| cosine(x, y)).sum();
            1.0 - sim / cells as f64
        }
        DifferenceMetric::MeanAbsolute => {
            let n = a.values().len();
            let sum: f64 = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y).abs())
                .sum();
            sum / n as f64
        }
    };
    Ok(d.clamp(0.0, 2.0))
}

/// `exp(-(j - n/2)^2 / (2 sigma^2))`.
pub fn gaussian_weight(j: usize, n: usize, sigma: f64) -> f64 {
    let offset = j as f64 - n as f64 / 2.0;
    (-(offset * offset) / (2.0 * sigma * sigma)).exp()
}

/// Scores for members `j = 2..=n` of one segment.
pub fn score_segment(
    anchor: &FeatureMap,
    members: &[FeatureMap],
    n: usize,
    sigma: f64,
) -> Result<Vec<f64>, SamplerError> {
    score_segment_with(DifferenceMetric::Cosine, anchor, members, n, sigma)
}

pub fn score_segment_with(
    metric: DifferenceMetric,
    anchor: &FeatureMap,
    members: &[FeatureMap],
    n: usize,
    sigma: f64,
) -> Result<Vec<f64>, SamplerError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SamplerError::InvalidSigma(sigma));
    }
    if members.len() + 1 != n {
        return Err(SamplerError::MemberCount {
            n,
            expected: n.saturating_sub(1),
            got: members.len(),
        });
    }
    members
        .iter()
        .enumerate()
        .map(|(i, m)| Ok(gaussian_weight(i + 2, n, sigma) * difference_with(metric, anchor, m)?))
        .collect()
}

/// `"auto"` or an explicit value, as used by sigma and the anchor interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Auto<T> {
    #[default]
    Auto,
    Value(T),
}

impl<T: Serialize> Serialize for Auto<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Auto::Auto => s.serialize_str("auto"),
            Auto::Value(v) => v.serialize(s),
        }
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Auto<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        match value {
            serde_json::Value::String(s) if s == "auto" => Ok(Auto::Auto),
            other => T::deserialize(other)
                .map(Auto::Value)
                .map_err(|e| de::Error::custom(format!("expected \"auto\" or a value: {e}"))),
        }
    }
}

impl<T: fmt::Display> fmt::Display for Auto<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Auto::Auto => f.write_str("auto"),
            Auto::Value(v) => v.fmt(f),
        }
    }
}

impl<T: std::str::FromStr> std::str::FromStr for Auto<T> {
    type Err = T::Err;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            Ok(Auto::Auto)
        } else {
            s.parse().map(Auto::Value)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Only frame 1.
    FirstFrame,
    /// Fixed-interval anchors only.
    Global,
    /// Anchors plus top-percentile motion scores.
    #[default]
    MotionDriven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub strategy: SamplingStrategy,
    /// Frames between anchors; `auto` is `floor(T / 4)`.
    pub anchor_interval: Auto<usize>,
    /// Gaussian width; `auto` is `n / 4` for each segment.
    pub sigma: Auto<f64>,
    /// Percentage of the score queue kept, in `(0, 100]`.
    pub k_percentile: f64,
    pub max_candidates: usize,
    pub metric: DifferenceMetric,
    pub encoder: EncoderConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::MotionDriven,
            anchor_interval: Auto::Auto,
            sigma: Auto::Auto,
            k_percentile: 20.0,
            max_candidates: 16,
            metric: DifferenceMetric::Cosine,
            encoder: EncoderConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.k_percentile > 0.0 && self.k_percentile <= 100.0) {
            return Err(SamplerError::InvalidConfig(format!(
                "k_percentile must be in (0, 100], got {}",
                self.k_percentile
            )));
        }
        if let Auto::Value(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(SamplerError::InvalidSigma(s));
            }
        }
        if self.anchor_interval == Auto::Value(0) {
            return Err(SamplerError::InvalidConfig(
                "anchor_interval must be >= 1".into(),
            ));
        }
        self.encoder.validate()?;
        Ok(())
    }

    pub fn interval_for(&self, len: usize) -> usize {
        match self.anchor_interval {
            Auto::Auto => default_interval(len),
            Auto::Value(v) => v.max(1),
        }
    }

    pub fn sigma_for(&self, n: usize) -> f64 {
        match self.sigma {
            Auto::Auto => n as f64 / 4.0,
            Auto::Value(s) => s,
        }
    }
}

/// Per-frame motion scores for a sequence; anchors carry `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameScores {
    pub anchors: AnchorSet,
    pub scores: Vec<Option<f64>>,
}

impl FrameScores {
    pub fn score(&self, t: usize) -> Option<f64> {
        self.scores[t - 1]
    }
}

/// Encode every frame and score all non-anchor frames against their anchor.
///
/// Frames are encoded in parallel and reassembled by index before scoring,
/// so scheduling cannot affect the result.
pub fn score_frames(seq: &FrameSequence, cfg: &SamplerConfig) -> Result<FrameScores, SamplerError> {
    cfg.validate()?;
    let len = seq.len();
    let anchors = place_anchors(len, cfg.interval_for(len));
    let mut scores = vec![None; len];
    if anchors.segments.iter().all(|s| s.members.is_empty()) {
        return Ok(FrameScores { anchors, scores });
    }
    let encoder = &cfg.encoder;
    let features: Vec<FeatureMap> = seq
        .frames()
        .par_iter()
        .map(|f| encoder.encode(f))
        .collect::<Result<_, _>>()?;
    let per_segment: Vec<Vec<f64>> = anchors
        .segments
        .par_iter()
        .map(|seg| {
            let members: Vec<FeatureMap> = seg
                .members
                .iter()
                .map(|&t| features[t - 1].clone())
                .collect();
            score_segment_with(
                cfg.metric,
                &features[seg.anchor - 1],
                &members,
                seg.len(),
                cfg.sigma_for(seg.len()),
            )
        })
        .collect::<Result<_, _>>()?;
    for (seg, seg_scores) in anchors.segments.iter().zip(per_segment) {
        for (&t, s) in seg.members.iter().zip(seg_scores) {
            scores[t - 1] = Some(s);
        }
    }
    Ok(FrameScores { anchors, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub t: usize,
    pub score: Option<f64>,
    pub anchor: bool,
}

/// Keyframe candidates, sorted by frame index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn indices(&self) -> Vec<usize> {
        self.candidates.iter().map(|c| c.t).collect()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Number of queue entries kept for a `k` percent cut of `queue_len` scores.
pub fn percentile_count(k_percentile: f64, queue_len: usize) -> usize {
    let raw = k_percentile * queue_len as f64 / 100.0;
    // Absorb representation error so exact products do not round up.
    ((raw - 1e-9).ceil().max(0.0) as usize).min(queue_len)
}

/// Pick the top-`K` percent non-anchor frames (ties to the lower index),
/// cap at `max_candidates`, and add every anchor.
pub fn select_candidates(scores: &FrameScores, cfg: &SamplerConfig) -> CandidateSet {
    let mut queue: Vec<(usize, f64)> = scores
        .scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i + 1, s)))
        .collect();
    queue.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let keep = percentile_count(cfg.k_percentile, queue.len()).min(cfg.max_candidates);

    let mut candidates: Vec<Candidate> = queue[..keep]
        .iter()
        .map(|&(t, s)| Candidate {
            t,
            score: Some(s),
            anchor: false,
        })
        .chain(scores.anchors.anchors().into_iter().map(|t| Candidate {
            t,
            score: None,
            anchor: true,
        }))
        .collect();
    candidates.sort_by_key(|c| c.t);
    CandidateSet { candidates }
}

/// Sample keyframe candidates according to `cfg.strategy`.
pub fn sample(seq: &FrameSequence, cfg: &SamplerConfig) -> Result<CandidateSet, SamplerError> {
    sample_with_scores(seq, cfg).map(|(c, _)| c)
}

/// Like [`sample`], also returning the per-frame scores when the strategy
/// computes them.
pub fn sample_with_scores(
    seq: &FrameSequence,
    cfg: &SamplerConfig,
) -> Result<(CandidateSet, Option<FrameScores>), SamplerError> {
    cfg.validate()?;
    let anchor_only = |anchors: Vec<usize>| CandidateSet {
        candidates: anchors
            .into_iter()
            .map(|t| Candidate {
                t,
                score: None,
                anchor: true,
            })
            .collect(),
    };
    match cfg.strategy {
        SamplingStrategy::FirstFrame => Ok((anchor_only(vec![1]), None)),
        SamplingStrategy::Global => {
            let len = seq.len();
            Ok((
                anchor_only(place_anchors(len, cfg.interval_for(len)).anchors()),
                None,
            ))
        }
        SamplingStrategy::MotionDriven => {
            let scores = score_frames(seq, cfg)?;
            Ok((select_candidates(&scores, cfg), Some(scores)))
        }
    }
}
