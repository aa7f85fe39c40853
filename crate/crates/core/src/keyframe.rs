//! Joint keyframe selection: fuse grounding confidence with segmentation
//! quality and pick the best-scoring candidate.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{GroundingResult, SegmentationResult};
use crate::frame_store::MaskFrame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeyframeError {
    #[error("score lists differ in length: {mllm} grounding vs {sam} segmentation")]
    LengthMismatch { mllm: usize, sam: usize },
    #[error("{which} score {value} at position {index} is outside [0, 1]")]
    OutOfRange {
        which: &'static str,
        index: usize,
        value: f64,
    },
    #[error("fusion weight a = {0} is outside [0, 1]")]
    InvalidWeight(f64),
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("n_keyframes must be at least 1")]
    ZeroKeyframes,
    #[error("empty key mask at frame {t}")]
    EmptyKeyMask { t: usize },
    #[error("no grounding for candidate frame {t}")]
    MissingGrounding { t: usize },
    #[error("no segmentation for candidate frame {t}")]
    MissingSegmentation { t: usize },
    #[error("no viable keyframe: {tried} candidates had empty masks (limit {limit} fallbacks)")]
    NoViableKeyframe { tried: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Weight of the grounding confidence; `1 - a` goes to segmentation.
    pub a: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { a: 0.6 }
    }
}

impl FusionConfig {
    pub fn new(a: f64) -> Result<Self, KeyframeError> {
        let cfg = Self { a };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), KeyframeError> {
        if (0.0..=1.0).contains(&self.a) {
            Ok(())
        } else {
            Err(KeyframeError::InvalidWeight(self.a))
        }
    }
}

/// Fused scores live on a 1e-12 grid so that sums like
/// `0.75 * 0.8 + 0.25 * 0.4` come out as the decimal they denote.
const GRID: f64 = 1e12;

fn check_unit(which: &'static str, values: &[f64]) -> Result<(), KeyframeError> {
    match values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(KeyframeError::OutOfRange {
            which,
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// `a * s_mllm + (1 - a) * s_sam` per candidate.
pub fn fuse(s_mllm: &[f64], s_sam: &[f64], cfg: &FusionConfig) -> Result<Vec<f64>, KeyframeError> {
    cfg.validate()?;
    if s_mllm.len() != s_sam.len() {
        return Err(KeyframeError::LengthMismatch {
            mllm: s_mllm.len(),
            sam: s_sam.len(),
        });
    }
    check_unit("grounding", s_mllm)?;
    check_unit("segmentation", s_sam)?;
    let a = cfg.a;
    if a == 1.0 {
        return Ok(s_mllm.to_vec());
    }
    if a == 0.0 {
        return Ok(s_sam.to_vec());
    }
    Ok(s_mllm
        .iter()
        .zip(s_sam)
        .map(|(m, s)| {
            let v = a * m + (1.0 - a) * s;
            ((v * GRID).round() / GRID).clamp(0.0, 1.0)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedScore {
    pub t: usize,
    pub s_mllm: f64,
    pub s_sam: f64,
    pub fused: f64,
}

/// Score every candidate frame from the backend results.
pub fn score_candidates(
    candidates: &[usize],
    grounding: &GroundingResult,
    segmentation: &SegmentationResult,
    cfg: &FusionConfig,
) -> Result<Vec<FusedScore>, KeyframeError> {
    if candidates.is_empty() {
        return Err(KeyframeError::NoCandidates);
    }
    let mut s_mllm = Vec::with_capacity(candidates.len());
    let mut s_sam = Vec::with_capacity(candidates.len());
    for &t in candidates {
        s_mllm.push(
            grounding
                .frame(t)
                .ok_or(KeyframeError::MissingGrounding { t })?
                .confidence,
        );
        s_sam.push(
            segmentation
                .frame(t)
                .ok_or(KeyframeError::MissingSegmentation { t })?
                .frame_score,
        );
    }
    let fused = fuse(&s_mllm, &s_sam, cfg)?;
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(i, &t)| FusedScore {
            t,
            s_mllm: s_mllm[i],
            s_sam: s_sam[i],
            fused: fused[i],
        })
        .collect())
}

/// Best first: higher fused score, then lower frame index.
pub fn rank(scores: &[FusedScore]) -> Vec<FusedScore> {
    let mut out = scores.to_vec();
    out.sort_by(|x, y| match y.fused.total_cmp(&x.fused) {
        Ordering::Equal => x.t.cmp(&y.t),
        o => o,
    });
    out
}

/// Indices (into `values`) of the top `n` values, ties to the lower `ts` entry.
pub fn top_n(ts: &[usize], values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ts.len().min(values.len())).collect();
    idx.sort_by(|&i, &j| match values[j].total_cmp(&values[i]) {
        Ordering::Equal => ts[i].cmp(&ts[j]),
        o => o,
    });
    idx.truncate(n);
    idx
}

/// The selection outcome. `keys[0] == key_t`; extra keys appear only when
/// more than one keyframe was requested.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeDecision {
    pub key_t: usize,
    pub keys: Vec<usize>,
    pub key_masks: Vec<MaskFrame>,
    pub scores: Vec<FusedScore>,
    pub a: f64,
    /// Remaining candidates in rank order.
    pub runner_ups: Vec<usize>,
    /// Candidates skipped because their mask was empty, in the order tried.
    pub rejected: Vec<usize>,
}

/// Audit form of a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub key_t: usize,
    pub scores: Vec<FusedScore>,
    pub a: f64,
}

impl KeyframeDecision {
    pub fn key_mask(&self) -> &MaskFrame {
        &self.key_masks[0]
    }

    pub fn record(&self) -> DecisionRecord {
        DecisionRecord {
            key_t: self.key_t,
            scores: self.scores.clone(),
            a: self.a,
        }
    }

    pub fn best_score(&self) -> f64 {
        self.scores
            .iter()
            .find(|s| s.t == self.key_t)
            .map_or(0.0, |s| s.fused)
    }
}

fn key_mask(
    segmentation: &SegmentationResult,
    t: usize,
    width: usize,
    height: usize,
) -> Result<MaskFrame, KeyframeError> {
    Ok(segmentation
        .frame(t)
        .ok_or(KeyframeError::MissingSegmentation { t })?
        .combined_mask(width, height))
}

/// Pick the top `n_keyframes` candidates. Fails with `EmptyKeyMask` when a
/// chosen frame's mask is all background.
pub fn select(
    scores: &[FusedScore],
    segmentation: &SegmentationResult,
    n_keyframes: usize,
    a: f64,
    dims: (usize, usize),
) -> Result<KeyframeDecision, KeyframeError> {
    select_with_fallback(scores, segmentation, n_keyframes, a, dims, 0)
}

/// Like [`select`], but a candidate with an empty mask is skipped in favour
/// of the next one in rank order, at most `max_fallbacks` times. When more
/// than one keyframe is requested and the candidates run out, the decision
/// carries as many keys as were found.
pub fn select_with_fallback(
    scores: &[FusedScore],
    segmentation: &SegmentationResult,
    n_keyframes: usize,
    a: f64,
    (width, height): (usize, usize),
    max_fallbacks: usize,
) -> Result<KeyframeDecision, KeyframeError> {
    if scores.is_empty() {
        return Err(KeyframeError::NoCandidates);
    }
    if n_keyframes == 0 {
        return Err(KeyframeError::ZeroKeyframes);
    }
    let ranked = rank(scores);
    let mut keys = Vec::new();
    let mut masks = Vec::new();
    let mut rejected = Vec::new();
    let mut consumed = 0;
    for s in &ranked {
        if keys.len() == n_keyframes {
            break;
        }
        consumed += 1;
        let mask = key_mask(segmentation, s.t, width, height)?;
        if mask.is_background_only() {
            if rejected.len() == max_fallbacks && !keys.is_empty() {
                break;
            }
            if rejected.len() == max_fallbacks {
                return Err(if max_fallbacks == 0 {
                    KeyframeError::EmptyKeyMask { t: s.t }
                } else {
                    KeyframeError::NoViableKeyframe {
                        tried: rejected.len() + 1,
                        limit: max_fallbacks,
                    }
                });
            }
            rejected.push(s.t);
            continue;
        }
        keys.push(s.t);
        masks.push(mask);
    }
    if keys.is_empty() {
        return Err(KeyframeError::NoViableKeyframe {
            tried: rejected.len(),
            limit: max_fallbacks,
        });
    }
    Ok(KeyframeDecision {
        key_t: keys[0],
        keys,
        key_masks: masks,
        scores: scores.to_vec(),
        a,
        runner_ups: ranked[consumed..].iter().map(|s| s.t).collect(),
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FrameSegmentation, ObjectMask};
    use crate::frame_store::BoundingBox;

    #[test]
    fn fuse_matches_hand_values() {
        let cfg = FusionConfig::new(0.75).unwrap();
        assert_eq!(
            fuse(&[0.8, 0.6], &[0.4, 0.9], &cfg).unwrap(),
            vec![0.7, 0.675]
        );
    }

    #[test]
    fn fuse_boundaries_are_exact() {
        let m = [0.1, 0.30000000000000004, 0.9];
        let s = [0.2, 0.7, 1.0 / 3.0];
        assert_eq!(fuse(&m, &s, &FusionConfig { a: 1.0 }).unwrap(), m.to_vec());
        assert_eq!(fuse(&m, &s, &FusionConfig { a: 0.0 }).unwrap(), s.to_vec());
    }

    #[test]
    fn fuse_rejects_bad_input() {
        let cfg = FusionConfig::default();
        assert!(matches!(
            fuse(&[0.1], &[0.1, 0.2], &cfg),
            Err(KeyframeError::LengthMismatch { .. })
        ));
        assert!(matches!(
            fuse(&[1.2], &[0.1], &cfg),
            Err(KeyframeError::OutOfRange { index: 0, .. })
        ));
        assert!(FusionConfig::new(-0.1).is_err());
    }

    fn scores(pairs: &[(usize, f64)]) -> Vec<FusedScore> {
        pairs
            .iter()
            .map(|&(t, f)| FusedScore {
                t,
                s_mllm: f,
                s_sam: f,
                fused: f,
            })
            .collect()
    }

    fn seg(ts: &[usize], empty: &[usize]) -> SegmentationResult {
        SegmentationResult {
            frames: ts
                .iter()
                .map(|&t| {
                    let mut mask = MaskFrame::empty(8, 8);
                    if !empty.contains(&t) {
                        mask.fill_box(BoundingBox::new(1, 1, 3, 3), 1);
                    }
                    FrameSegmentation {
                        t,
                        objects: vec![ObjectMask {
                            id: 1,
                            mask,
                            score: 1.0,
                        }],
                        frame_score: 1.0,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn argmax_with_index_tie_break() {
        let d = select(
            &scores(&[(3, 0.7), (9, 0.675)]),
            &seg(&[3, 9], &[]),
            1,
            0.6,
            (8, 8),
        )
        .unwrap();
        assert_eq!(d.key_t, 3);
        let d = select(
            &scores(&[(5, 0.4), (2, 0.4)]),
            &seg(&[5, 2], &[]),
            1,
            0.6,
            (8, 8),
        )
        .unwrap();
        assert_eq!(d.key_t, 2);
        assert_eq!(d.runner_ups, vec![5]);
    }

    #[test]
    fn top_two() {
        let s = scores(&[(1, 0.1), (2, 0.9), (3, 0.5)]);
        let d = select(&s, &seg(&[1, 2, 3], &[]), 2, 0.6, (8, 8)).unwrap();
        assert_eq!(d.keys, vec![2, 3]);
        assert_eq!(top_n(&[1, 2, 3], &[0.1, 0.9, 0.5], 2), vec![1, 2]);
    }

    #[test]
    fn empty_mask_falls_back_to_runner_up() {
        let s = scores(&[(1, 0.9), (2, 0.8), (3, 0.7)]);
        let sg = seg(&[1, 2, 3], &[1]);
        let err = select(&s, &sg, 1, 0.6, (8, 8)).unwrap_err();
        assert_eq!(err.to_string(), "empty key mask at frame 1");
        let d = select_with_fallback(&s, &sg, 1, 0.6, (8, 8), 3).unwrap();
        assert_eq!((d.key_t, d.rejected.clone()), (2, vec![1]));
    }

    #[test]
    fn fallbacks_are_bounded() {
        let ts = [1, 2, 3, 4, 5];
        let s = scores(&[(1, 0.9), (2, 0.8), (3, 0.7), (4, 0.6), (5, 0.5)]);
        let err =
            select_with_fallback(&s, &seg(&ts, &[1, 2, 3, 4]), 1, 0.6, (8, 8), 3).unwrap_err();
        assert!(matches!(err, KeyframeError::NoViableKeyframe { .. }));
        let d = select_with_fallback(&s, &seg(&ts, &[1, 2, 3]), 1, 0.6, (8, 8), 3).unwrap();
        assert_eq!(d.key_t, 4);
    }

    #[test]
    fn multi_key_keeps_what_it_found() {
        let s = scores(&[(1, 0.9), (2, 0.8), (3, 0.7), (4, 0.6), (5, 0.5)]);
        let d = select_with_fallback(&s, &seg(&[1, 2, 3, 4, 5], &[2, 3, 4, 5]), 3, 0.6, (8, 8), 3)
            .unwrap();
        assert_eq!(d.keys, vec![1]);
        assert_eq!(d.rejected, vec![2, 3, 4]);
    }

    #[test]
    fn record_json_shape() {
        let d = select(
            &[FusedScore {
                t: 3,
                s_mllm: 0.7,
                s_sam: 0.9,
                fused: 0.78,
            }],
            &seg(&[3], &[]),
            1,
            0.6,
            (8, 8),
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&d.record()).unwrap(),
            r#"{"key_t":3,"scores":[{"t":3,"s_mllm":0.7,"s_sam":0.9,"fused":0.78}],"a":0.6}"#
        );
    }
}
