//! Frame sequences, multi-object masks and their on-disk layout.
//!
//! Frame indices in the public API are 1-based (`t = 1..=T`). Storage
//! filenames are zero-padded integers that only need to be contiguous.

mod io;
pub mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    decode_mask_png, decode_rgb_png, encode_mask_png, encode_rgb_png, load_sequence, read_masks,
    write_frames, write_masks,
};
pub use synth::{Annotations, SyntheticScene};

/// Object label inside a [`MaskFrame`]. `0` is background.
pub type ObjectId = u16;

pub const BACKGROUND: ObjectId = 0;

#[derive(Debug, Error)]
pub enum FrameStoreError {
    #[error("directory not found: {0}")]
    MissingDirectory(PathBuf),
    #[error("no frames found in {0}")]
    Empty(PathBuf),
    #[error("non-contiguous frame indices: expected {expected}, found {file}")]
    NonContiguous { expected: u64, file: PathBuf },
    #[error("mixed dimensions: {file} is {found_w}x{found_h}, expected {w}x{h}")]
    MixedDimensions {
        file: PathBuf,
        w: usize,
        h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("frame file name is not a zero-padded index: {0}")]
    BadFileName(PathBuf),
    #[error("unsupported raster format (lossless formats only): {0}")]
    UnsupportedFormat(PathBuf),
    #[error("label overflow: label {label} does not fit an 8-bit indexed raster")]
    LabelOverflow { label: ObjectId },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid image buffer: {0}")]
    InvalidBuffer(String),
    #[error("failed to decode {file}: {message}")]
    Decode { file: PathBuf, message: String },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, FrameStoreError> {
        if width == 0 || height == 0 {
            return Err(FrameStoreError::InvalidBuffer(format!(
                "zero-sized image {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(FrameStoreError::InvalidBuffer(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Uniformly colored image. Panics on zero dimensions.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec.601 luma normalized to `[0, 1]`.
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> f64 {
        let [r, g, b] = self.pixel(x, y);
        (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
    }
}

/// The input video: `T >= 1` frames of identical size.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    id: String,
    frames: Vec<Image>,
    sources: Vec<Option<PathBuf>>,
}

impl FrameSequence {
    pub fn new(id: impl Into<String>, frames: Vec<Image>) -> Result<Self, FrameStoreError> {
        let sources = vec![None; frames.len()];
        Self::with_sources(id, frames, sources)
    }

    pub(crate) fn with_sources(
        id: impl Into<String>,
        frames: Vec<Image>,
        sources: Vec<Option<PathBuf>>,
    ) -> Result<Self, FrameStoreError> {
        let first = frames
            .first()
            .ok_or_else(|| FrameStoreError::InvalidBuffer("empty frame sequence".into()))?;
        let (w, h) = (first.width(), first.height());
        for (i, f) in frames.iter().enumerate() {
            if f.width() != w || f.height() != h {
                return Err(FrameStoreError::MixedDimensions {
                    file: sources
                        .get(i)
                        .cloned()
                        .flatten()
                        .unwrap_or_else(|| PathBuf::from(format!("frame {}", i + 1))),
                    w,
                    h,
                    found_w: f.width(),
                    found_h: f.height(),
                });
            }
        }
        Ok(Self {
            id: id.into(),
            frames,
            sources,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Sequence length `T`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    /// Frame `t` (1-based).
    ///
    /// # Panics
    ///
    /// Panics when `t` is outside `1..=T`.
    pub fn frame(&self, t: usize) -> &Image {
        assert!(
            t >= 1 && t <= self.frames.len(),
            "frame index {t} out of range"
        );
        &self.frames[t - 1]
    }

    pub fn get(&self, t: usize) -> Option<&Image> {
        t.checked_sub(1).and_then(|i| self.frames.get(i))
    }

    /// File the frame was loaded from, when known.
    pub fn source(&self, t: usize) -> Option<&std::path::Path> {
        t.checked_sub(1)
            .and_then(|i| self.sources.get(i))
            .and_then(|p| p.as_deref())
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }
}

/// Axis-aligned box in integer pixels; `x2`/`y2` are exclusive.
///
/// Serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 4]", into = "[i64; 4]")]
pub struct BoundingBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl From<[i64; 4]> for BoundingBox {
    fn from([x1, y1, x2, y2]: [i64; 4]) -> Self {
        Self { x1, y1, x2, y2 }
    }
}

impl From<BoundingBox> for [i64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BoundingBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> i64 {
        (self.x2 - self.x1).max(0)
    }

    pub fn height(&self) -> i64 {
        (self.y2 - self.y1).max(0)
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Intersection with the `width x height` canvas.
    pub fn clamp(&self, width: usize, height: usize) -> Self {
        let (w, h) = (width as i64, height as i64);
        let x1 = self.x1.clamp(0, w);
        let y1 = self.y1.clamp(0, h);
        Self {
            x1,
            y1,
            x2: self.x2.clamp(x1, w),
            y2: self.y2.clamp(y1, h),
        }
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

/// Per-frame multi-object label grid (`0` background, `k` object `k`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskFrame {
    width: usize,
    height: usize,
    labels: Vec<ObjectId>,
}

impl MaskFrame {
    pub fn new(
        width: usize,
        height: usize,
        labels: Vec<ObjectId>,
    ) -> Result<Self, FrameStoreError> {
        if labels.len() != width * height {
            return Err(FrameStoreError::InvalidBuffer(format!(
                "expected {} labels for {width}x{height}, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![BACKGROUND; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[ObjectId] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> ObjectId {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, id: ObjectId) {
        self.labels[y * self.width + x] = id;
    }

    /// Paint `id` over the part of `b` that lies on the canvas.
    pub fn fill_box(&mut self, b: BoundingBox, id: ObjectId) {
        let b = b.clamp(self.width, self.height);
        for y in b.y1..b.y2 {
            for x in b.x1..b.x2 {
                self.set(x as usize, y as usize, id);
            }
        }
    }

    /// Sorted ids of the objects present in this frame.
    pub fn object_ids(&self) -> Vec<ObjectId> {
        let mut seen = std::collections::BTreeSet::new();
        for &l in &self.labels {
            if l != BACKGROUND {
                seen.insert(l);
            }
        }
        seen.into_iter().collect()
    }

    pub fn max_label(&self) -> ObjectId {
        self.labels.iter().copied().max().unwrap_or(BACKGROUND)
    }

    pub fn is_background_only(&self) -> bool {
        self.labels.iter().all(|&l| l == BACKGROUND)
    }

    pub fn area(&self, id: ObjectId) -> usize {
        self.labels.iter().filter(|&&l| l == id).count()
    }

    /// Binary layer of one object, row-major.
    pub fn layer(&self, id: ObjectId) -> Vec<bool> {
        self.labels.iter().map(|&l| l == id).collect()
    }

    /// Tight bounding box of `id`, or `None` when the object is absent.
    pub fn bbox(&self, id: ObjectId) -> Option<BoundingBox> {
        let mut b: Option<BoundingBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.label(x, y) == id {
                    let (x, y) = (x as i64, y as i64);
                    b = Some(match b {
                        None => BoundingBox::new(x, y, x + 1, y + 1),
                        Some(b) => BoundingBox::new(
                            b.x1.min(x),
                            b.y1.min(y),
                            b.x2.max(x + 1),
                            b.y2.max(y + 1),
                        ),
                    });
                }
            }
        }
        b
    }

    /// Copy keeping only the listed ids; everything else becomes background.
    pub fn retain_ids(&self, ids: &[ObjectId]) -> Self {
        let labels = self
            .labels
            .iter()
            .map(|&l| if ids.contains(&l) { l } else { BACKGROUND })
            .collect();
        Self {
            width: self.width,
            height: self.height,
            labels,
        }
    }
}

/// Per-frame masks for a whole sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskSequence {
    masks: Vec<MaskFrame>,
}

impl MaskSequence {
    pub fn new(masks: Vec<MaskFrame>) -> Result<Self, FrameStoreError> {
        let first = masks
            .first()
            .ok_or_else(|| FrameStoreError::InvalidBuffer("empty mask sequence".into()))?;
        let (w, h) = (first.width(), first.height());
        if let Some((i, m)) = masks
            .iter()
            .enumerate()
            .find(|(_, m)| m.width() != w || m.height() != h)
        {
            return Err(FrameStoreError::DimensionMismatch(format!(
                "mask {} is {}x{}, expected {w}x{h}",
                i + 1,
                m.width(),
                m.height()
            )));
        }
        Ok(Self { masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Mask of frame `t` (1-based). Panics when out of range.
    pub fn mask(&self, t: usize) -> &MaskFrame {
        assert!(
            t >= 1 && t <= self.masks.len(),
            "mask index {t} out of range"
        );
        &self.masks[t - 1]
    }

    pub fn masks(&self) -> &[MaskFrame] {
        &self.masks
    }

    pub fn into_masks(self) -> Vec<MaskFrame> {
        self.masks
    }

    /// Object count `N`, i.e. the largest id used anywhere in the sequence.
    pub fn object_count(&self) -> ObjectId {
        self.masks
            .iter()
            .map(MaskFrame::max_label)
            .max()
            .unwrap_or(0)
    }

    /// Sorted union of ids present in any frame.
    pub fn object_ids(&self) -> Vec<ObjectId> {
        let mut all: Vec<ObjectId> = self.masks.iter().flat_map(|m| m.object_ids()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn retain_ids(&self, ids: &[ObjectId]) -> Self {
        Self {
            masks: self.masks.iter().map(|m| m.retain_ids(ids)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_of_white_is_one() {
        let img = Image::filled(2, 2, [255, 255, 255]);
        assert!((img.luma(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn image_rejects_wrong_buffer() {
        assert!(Image::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn sequence_rejects_mixed_dimensions() {
        let err = FrameSequence::new(
            "s",
            vec![Image::filled(4, 4, [0; 3]), Image::filled(2, 4, [0; 3])],
        )
        .unwrap_err();
        assert!(err.to_string().contains("mixed dimensions"));
    }

    #[test]
    fn frames_are_one_based() {
        let seq = FrameSequence::new(
            "s",
            vec![Image::filled(1, 1, [1; 3]), Image::filled(1, 1, [2; 3])],
        )
        .unwrap();
        assert_eq!(seq.frame(1).pixel(0, 0), [1; 3]);
        assert_eq!(seq.frame(2).pixel(0, 0), [2; 3]);
        assert!(seq.get(0).is_none());
        assert!(seq.get(3).is_none());
    }

    #[test]
    fn bbox_is_tight_and_exclusive() {
        let mut m = MaskFrame::empty(10, 10);
        m.fill_box(BoundingBox::new(2, 3, 5, 7), 1);
        assert_eq!(m.bbox(1), Some(BoundingBox::new(2, 3, 5, 7)));
        assert_eq!(m.area(1), 12);
        assert_eq!(m.bbox(2), None);
    }

    #[test]
    fn fill_box_clips_to_canvas() {
        let mut m = MaskFrame::empty(4, 4);
        m.fill_box(BoundingBox::new(-2, -2, 2, 2), 3);
        assert_eq!(m.area(3), 4);
        assert_eq!(m.bbox(3), Some(BoundingBox::new(0, 0, 2, 2)));
    }

    #[test]
    fn box_serializes_as_array() {
        let b = BoundingBox::new(1, 2, 3, 4);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1,2,3,4]");
    }

    #[test]
    fn object_count_is_max_label() {
        let mut a = MaskFrame::empty(3, 3);
        a.set(0, 0, 2);
        let seq = MaskSequence::new(vec![a, MaskFrame::empty(3, 3)]).unwrap();
        assert_eq!(seq.object_count(), 2);
        assert_eq!(seq.object_ids(), vec![2]);
    }
}
