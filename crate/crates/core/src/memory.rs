//! Object memory: pooled descriptors of the key objects plus an append-only
//! bank that records them for audit.
//!
//! The tracker backend owns the memory it actually propagates with; the bank
//! here mirrors what was handed to it.

use std::collections::HashSet;
use std::io::Write;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Direction;
use crate::encoder::{cell_spans, Channel, EncoderConfig};
use crate::frame_store::{BoundingBox, Image, MaskFrame, ObjectId};

/// Sub-grid over each object's bounding box.
pub const POOL_GRID: usize = 4;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("no objects to memorize")]
    NoObjects,
    #[error("mask is {mask_w}x{mask_h} but frame is {frame_w}x{frame_h}")]
    DimensionMismatch {
        mask_w: usize,
        mask_h: usize,
        frame_w: usize,
        frame_h: usize,
    },
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("duplicate memory entry for object {id} at frame {t}")]
    Duplicate { id: ObjectId, t: usize },
    #[error("memory bank is full ({0} entries)")]
    Full(usize),
    #[error("writing bank dump: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMemoryEntry {
    pub t: usize,
    pub id: ObjectId,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub area: usize,
    /// `POOL_GRID² × channels` values, cell-major.
    pub descriptor: Vec<f64>,
    /// Set for entries recorded on behalf of one propagation leg.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

fn pixel_feature(frame: &Image, x: usize, y: usize, ch: Channel) -> f64 {
    let l = frame.luma(x, y);
    match ch {
        Channel::LumaMean => l,
        Channel::GradXEnergy if x + 1 < frame.width() => (frame.luma(x + 1, y) - l).abs(),
        Channel::GradYEnergy if y + 1 < frame.height() => (frame.luma(x, y + 1) - l).abs(),
        _ => 0.0,
    }
}

/// One entry per object in `mask`: per-pixel encoder channels averaged over
/// the object's pixels in each cell of a 4×4 split of its bounding box.
/// Cells holding no object pixels contribute zeros.
pub fn memorize(
    frame: &Image,
    t: usize,
    mask: &MaskFrame,
    encoder: &EncoderConfig,
) -> Result<Vec<ObjectMemoryEntry>, MemoryError> {
    encoder
        .validate()
        .map_err(|e| MemoryError::InvalidConfig(e.to_string()))?;
    if mask.width() != frame.width() || mask.height() != frame.height() {
        return Err(MemoryError::DimensionMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            frame_w: frame.width(),
            frame_h: frame.height(),
        });
    }
    let ids = mask.object_ids();
    if ids.is_empty() {
        return Err(MemoryError::NoObjects);
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let bbox = mask.bbox(id).expect("id taken from the mask");
        let (x0, y0) = (bbox.x1 as usize, bbox.y1 as usize);
        let rows = cell_spans(bbox.height() as usize, POOL_GRID);
        let cols = cell_spans(bbox.width() as usize, POOL_GRID);
        let mut descriptor = Vec::with_capacity(POOL_GRID * POOL_GRID * encoder.channels.len());
        for &(r0, r1) in &rows {
            for &(c0, c1) in &cols {
                let mut sums = vec![0.0; encoder.channels.len()];
                let mut n = 0usize;
                for y in y0 + r0..y0 + r1 {
                    for x in x0 + c0..x0 + c1 {
                        if mask.label(x, y) != id {
                            continue;
                        }
                        n += 1;
                        for (s, &ch) in sums.iter_mut().zip(&encoder.channels) {
                            *s += pixel_feature(frame, x, y, ch);
                        }
                    }
                }
                descriptor.extend(
                    sums.into_iter()
                        .map(|s| if n == 0 { 0.0 } else { s / n as f64 }),
                );
            }
        }
        out.push(ObjectMemoryEntry {
            t,
            id,
            bbox,
            area: mask.area(id),
            descriptor,
            direction: None,
        });
    }
    Ok(out)
}

/// Append-only ledger of memory entries. Readers run concurrently; inserts
/// are exclusive.
#[derive(Debug, Default)]
pub struct MemoryBank {
    capacity: Option<usize>,
    inner: RwLock<BankInner>,
}

#[derive(Debug, Default)]
struct BankInner {
    entries: Vec<ObjectMemoryEntry>,
    keys: HashSet<(ObjectId, usize, Option<Direction>)>,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            capacity: Some(capacity),
            inner: RwLock::default(),
        }
    }

    pub fn insert(&self, entry: ObjectMemoryEntry) -> Result<(), MemoryError> {
        let mut inner = self.inner.write().expect("memory bank poisoned");
        if let Some(cap) = self.capacity {
            if inner.entries.len() >= cap {
                return Err(MemoryError::Full(cap));
            }
        }
        if !inner.keys.insert((entry.id, entry.t, entry.direction)) {
            return Err(MemoryError::Duplicate {
                id: entry.id,
                t: entry.t,
            });
        }
        inner.entries.push(entry);
        Ok(())
    }

    pub fn extend(
        &self,
        entries: impl IntoIterator<Item = ObjectMemoryEntry>,
    ) -> Result<(), MemoryError> {
        entries.into_iter().try_for_each(|e| self.insert(e))
    }

    /// Entries for `id` in insertion order.
    pub fn lookup(&self, id: ObjectId) -> Vec<ObjectMemoryEntry> {
        let inner = self.inner.read().expect("memory bank poisoned");
        inner
            .entries
            .iter()
            .filter(|e| e.id == id)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner
            .read()
            .expect("memory bank poisoned")
            .entries
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Arc<[ObjectMemoryEntry]> {
        self.inner
            .read()
            .expect("memory bank poisoned")
            .entries
            .clone()
            .into()
    }

    /// One JSON document per line.
    pub fn dump_jsonl(&self, mut out: impl Write) -> Result<(), MemoryError> {
        for e in self.snapshot().iter() {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
