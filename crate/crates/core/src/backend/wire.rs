//! JSON documents exchanged with remote backends.
//!
//! Field order in every struct is the canonical order on the wire, so a
//! parsed document re-serializes byte-identically.

use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, Direction, FrameRef, FrameSegmentation, GroundingResult, ObjectBox, ObjectMask,
    SegmentationResult,
};
use crate::frame_store::{decode_mask_png, decode_rgb_png, encode_mask_png, encode_rgb_png};
use crate::frame_store::{Image, MaskFrame, ObjectId};

pub const GROUND: &str = "/ground";
pub const SEGMENT: &str = "/segment";
pub const TRACK_INIT: &str = "/track/init";
pub const TRACK_STEP: &str = "/track/step";

/// An image either inlined as base64 PNG or referenced on a shared filesystem.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImagePayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
}

impl ImagePayload {
    pub fn from_frame(frame: &FrameRef<'_>, prefer_path: bool) -> Self {
        match frame.path {
            Some(p) if prefer_path => Self {
                image_b64: None,
                image_path: Some(p.to_path_buf()),
            },
            _ => Self {
                image_b64: Some(B64.encode(encode_rgb_png(frame.image))),
                image_path: None,
            },
        }
    }

    /// Decode the image; a path wins when both are given.
    pub fn decode(&self) -> Result<Image, BackendError> {
        if let Some(path) = &self.image_path {
            return read_image(path);
        }
        let b64 = self.image_b64.as_deref().ok_or_else(|| {
            BackendError::Schema("missing field `image_b64` or `image_path`".into())
        })?;
        let bytes = B64
            .decode(b64)
            .map_err(|e| BackendError::Encoding(format!("image_b64: {e}")))?;
        decode_rgb_png(&bytes).map_err(|e| BackendError::Encoding(format!("image_b64: {e}")))
    }
}

fn read_image(path: &Path) -> Result<Image, BackendError> {
    let bytes = std::fs::read(path)
        .map_err(|e| BackendError::Encoding(format!("image_path {}: {e}", path.display())))?;
    decode_rgb_png(&bytes)
        .map_err(|e| BackendError::Encoding(format!("image_path {}: {e}", path.display())))
}

pub fn mask_to_b64(mask: &MaskFrame) -> Result<String, BackendError> {
    encode_mask_png(mask)
        .map(|png| B64.encode(png))
        .map_err(|e| BackendError::Encoding(format!("mask_b64: {e}")))
}

pub fn mask_from_b64(b64: &str) -> Result<MaskFrame, BackendError> {
    let bytes = B64
        .decode(b64)
        .map_err(|e| BackendError::Encoding(format!("mask_b64: {e}")))?;
    decode_mask_png(&bytes).map_err(|e| BackendError::Encoding(format!("mask_b64: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundFrame {
    pub t: usize,
    #[serde(flatten)]
    pub image: ImagePayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundRequest {
    pub query: String,
    pub prompt: String,
    pub frames: Vec<GroundFrame>,
}

/// Response body of `/ground`.
pub type GroundResponse = GroundingResult;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentFrame {
    pub t: usize,
    #[serde(flatten)]
    pub image: ImagePayload,
    pub boxes: Vec<ObjectBox>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub frames: Vec<SegmentFrame>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMask {
    pub id: ObjectId,
    pub mask_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireIou {
    pub id: ObjectId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFrameResult {
    pub t: usize,
    pub masks: Vec<WireMask>,
    pub iou: Vec<WireIou>,
    pub frame_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub frames: Vec<SegmentFrameResult>,
}

impl SegmentResponse {
    pub fn from_result(result: &SegmentationResult) -> Result<Self, BackendError> {
        let frames = result
            .frames
            .iter()
            .map(|f| {
                Ok(SegmentFrameResult {
                    t: f.t,
                    masks: f
                        .objects
                        .iter()
                        .map(|o| {
                            Ok(WireMask {
                                id: o.id,
                                mask_b64: mask_to_b64(&o.mask)?,
                            })
                        })
                        .collect::<Result<_, BackendError>>()?,
                    iou: f
                        .objects
                        .iter()
                        .map(|o| WireIou {
                            id: o.id,
                            score: o.score,
                        })
                        .collect(),
                    frame_score: f.frame_score,
                })
            })
            .collect::<Result<_, BackendError>>()?;
        Ok(Self { frames })
    }

    /// Pair each mask with its IoU entry. Every mask needs exactly one score.
    pub fn into_result(self) -> Result<SegmentationResult, BackendError> {
        let mut frames = Vec::with_capacity(self.frames.len());
        for f in self.frames {
            if f.masks.len() != f.iou.len() {
                return Err(BackendError::Schema(format!(
                    "frame {}: {} masks but {} iou entries",
                    f.t,
                    f.masks.len(),
                    f.iou.len()
                )));
            }
            let mut objects = Vec::with_capacity(f.masks.len());
            for m in f.masks {
                let score = f
                    .iou
                    .iter()
                    .find(|s| s.id == m.id)
                    .ok_or_else(|| {
                        BackendError::Schema(format!("frame {}: no iou for object {}", f.t, m.id))
                    })?
                    .score;
                let raw = mask_from_b64(&m.mask_b64)?;
                // Binary layer: any foreground value belongs to this object.
                let labels = raw
                    .labels()
                    .iter()
                    .map(|&l| if l == 0 { 0 } else { m.id })
                    .collect();
                let mask = MaskFrame::new(raw.width(), raw.height(), labels)
                    .map_err(|e| BackendError::Encoding(e.to_string()))?;
                objects.push(ObjectMask {
                    id: m.id,
                    mask,
                    score,
                });
            }
            frames.push(FrameSegmentation {
                t: f.t,
                objects,
                frame_score: f.frame_score,
            });
        }
        Ok(SegmentationResult { frames })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackInitRequest {
    pub t: usize,
    #[serde(flatten)]
    pub image: ImagePayload,
    pub mask_b64: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackInitResponse {
    pub session: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackStepRequest {
    pub session: String,
    pub t: usize,
    #[serde(flatten)]
    pub image: ImagePayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackStepResponse {
    pub t: usize,
    pub mask_b64: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Parse a wire document, turning serde's message (which names the
/// offending field) into a schema error.
pub fn parse<T: serde::de::DeserializeOwned>(what: &str, body: &str) -> Result<T, BackendError> {
    serde_json::from_str(body).map_err(|e| BackendError::Schema(format!("{what}: {e}")))
}

pub fn to_json<T: Serialize>(doc: &T) -> String {
    serde_json::to_string(doc).expect("wire documents always serialize")
}
