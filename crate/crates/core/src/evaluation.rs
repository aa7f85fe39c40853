//! Region similarity J, boundary accuracy F and moving-average stability
//! trends, following the DAVIS conventions.
//!
//! An object absent from both prediction and ground truth in a frame scores
//! 1 on both metrics, so frames where nothing should be segmented do not
//! drag sequence means down.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame_store::{MaskFrame, MaskSequence, ObjectId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("dimension mismatch: prediction {pw}x{ph}, ground truth {gw}x{gh}")]
    DimensionMismatch {
        pw: usize,
        ph: usize,
        gw: usize,
        gh: usize,
    },
    #[error("sequence length mismatch: prediction {pred}, ground truth {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("moving-average window {w} must be odd and within 1..={len}")]
    Window { w: usize, len: usize },
}

fn check_dims(pred: &MaskFrame, gt: &MaskFrame) -> Result<(), EvalError> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(EvalError::DimensionMismatch {
            pw: pred.width(),
            ph: pred.height(),
            gw: gt.width(),
            gh: gt.height(),
        });
    }
    Ok(())
}

/// J for one object's binary layer.
pub fn jaccard(pred: &MaskFrame, gt: &MaskFrame, id: ObjectId) -> Result<f64, EvalError> {
    check_dims(pred, gt)?;
    Ok(crate::backend::stub::layer_iou(
        &pred.layer(id),
        &gt.layer(id),
    ))
}

/// Default boundary tolerance: 0.8% of the image diagonal, rounded up, at
/// least one pixel.
pub fn default_tolerance(width: usize, height: usize) -> f64 {
    let diag = ((width * width + height * height) as f64).sqrt();
    (0.008 * diag).ceil().max(1.0)
}

/// Foreground pixels with a 4-neighbour outside the layer (image border
/// counts as outside).
pub fn boundary(layer: &[bool], width: usize, height: usize) -> Vec<bool> {
    let at = |x: isize, y: isize| {
        x >= 0
            && y >= 0
            && (x as usize) < width
            && (y as usize) < height
            && layer[y as usize * width + x as usize]
    };
    (0..height)
        .flat_map(|y| (0..width).map(move |x| (x as isize, y as isize)))
        .map(|(x, y)| at(x, y) && !(at(x - 1, y) && at(x + 1, y) && at(x, y - 1) && at(x, y + 1)))
        .collect()
}

/// Fraction of `from` boundary pixels within `tol` of some `to` pixel.
fn matched_fraction(from: &[bool], to: &[bool], width: usize, height: usize, tol: f64) -> f64 {
    let r = tol.floor() as isize;
    let tol2 = tol * tol;
    let (mut hit, mut total) = (0usize, 0usize);
    for y in 0..height as isize {
        for x in 0..width as isize {
            if !from[y as usize * width + x as usize] {
                continue;
            }
            total += 1;
            let found = (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx >= 0
                        && ny >= 0
                        && (nx as usize) < width
                        && (ny as usize) < height
                        && ((dx * dx + dy * dy) as f64) <= tol2
                        && to[ny as usize * width + nx as usize]
                })
            });
            hit += usize::from(found);
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// F for one object's binary layer; `tolerance` defaults to
/// [`default_tolerance`].
pub fn boundary_f(
    pred: &MaskFrame,
    gt: &MaskFrame,
    id: ObjectId,
    tolerance: Option<f64>,
) -> Result<f64, EvalError> {
    check_dims(pred, gt)?;
    let (w, h) = (gt.width(), gt.height());
    let tol = tolerance.unwrap_or_else(|| default_tolerance(w, h));
    let pb = boundary(&pred.layer(id), w, h);
    let gb = boundary(&gt.layer(id), w, h);
    let (p_any, g_any) = (pb.contains(&true), gb.contains(&true));
    match (p_any, g_any) {
        (false, false) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let precision = matched_fraction(&pb, &gb, w, h, tol);
    let recall = matched_fraction(&gb, &pb, w, h, tol);
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Centred simple moving average; output has `len - w + 1` points.
pub fn stability_trend(series: &[f64], w: usize) -> Result<Vec<f64>, EvalError> {
    if w == 0 || w.is_multiple_of(2) || w > series.len() {
        return Err(EvalError::Window {
            w,
            len: series.len(),
        });
    }
    Ok(series
        .windows(w)
        .map(|win| win.iter().sum::<f64>() / w as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub id: ObjectId,
    pub j: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub t: usize,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub objects: Vec<ObjectScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub objects: Vec<ObjectId>,
    pub frames: Vec<FrameMetrics>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub jf: f64,
    pub window: usize,
    /// Moving average of per-frame J&F. Point `i` is centred on frame
    /// `i + (window + 1) / 2`. Empty when the sequence is shorter than the
    /// window.
    pub trend: Vec<f64>,
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        1.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Score every ground-truth object (or, if the ground truth is empty, every
/// predicted object).
pub fn evaluate(
    pred: &MaskSequence,
    gt: &MaskSequence,
    window: usize,
) -> Result<MetricsReport, EvalError> {
    let mut ids = gt.object_ids();
    if ids.is_empty() {
        ids = pred.object_ids();
    }
    evaluate_objects(pred, gt, &ids, window)
}

pub fn evaluate_objects(
    pred: &MaskSequence,
    gt: &MaskSequence,
    ids: &[ObjectId],
    window: usize,
) -> Result<MetricsReport, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(EvalError::Window {
            w: window,
            len: gt.len(),
        });
    }
    let mut frames = Vec::with_capacity(gt.len());
    for (i, (p, g)) in pred.masks().iter().zip(gt.masks()).enumerate() {
        let objects = ids
            .iter()
            .map(|&id| {
                Ok(ObjectScore {
                    id,
                    j: jaccard(p, g, id)?,
                    f: boundary_f(p, g, id, None)?,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let j = mean(objects.iter().map(|o| o.j));
        let f = mean(objects.iter().map(|o| o.f));
        frames.push(FrameMetrics {
            t: i + 1,
            j,
            f,
            jf: (j + f) / 2.0,
            objects,
        });
    }
    let mean_j = mean(frames.iter().map(|f| f.j));
    let mean_f = mean(frames.iter().map(|f| f.f));
    let series: Vec<f64> = frames.iter().map(|f| f.jf).collect();
    let trend = if window <= series.len() {
        stability_trend(&series, window)?
    } else {
        Vec::new()
    };
    Ok(MetricsReport {
        objects: ids.to_vec(),
        frames,
        mean_j,
        mean_f,
        jf: (mean_j + mean_f) / 2.0,
        window,
        trend,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Trend value centred on frame `t`, if any.
    pub fn trend_at(&self, t: usize) -> Option<f64> {
        let half = self.window / 2;
        t.checked_sub(half + 1)
            .and_then(|i| self.trend.get(i).copied())
    }

    /// Aligned plain-text table: one row per frame plus a summary line.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6}  {:>7}  {:>7}  {:>7}  {:>7}",
            "frame", "J", "F", "J&F", "MA"
        );
        for f in &self.frames {
            let ma = self
                .trend_at(f.t)
                .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "{:>6}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7}",
                f.t, f.j, f.f, f.jf, ma
            );
        }
        let _ = writeln!(
            s,
            "{:>6}  {:>7.4}  {:>7.4}  {:>7.4}",
            "mean", self.mean_j, self.mean_f, self.jf
        );
        s
    }

    /// `t,j,f,jf,ma` rows; `ma` is blank where the window does not fit.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,j,f,jf,ma\n");
        for f in &self.frames {
            let ma = self
                .trend_at(f.t)
                .map_or_else(String::new, |v| v.to_string());
            let _ = writeln!(s, "{},{},{},{},{}", f.t, f.j, f.f, f.jf, ma);
        }
        s
    }
}
