//! Shared fixtures and brute-force oracles for the integration tests.
//!
//! Every oracle here is written from the definitions, directly over pixels,
//! without calling into the library code it checks.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdam_core::backend::{BackendError, Direction, FrameRef, Tracker};
use sdam_core::frame_store::synth::{SceneEvent, SceneObject, Trajectory};
use sdam_core::{FrameSequence, Image, MaskFrame, SyntheticScene};

/// 100 frames, 128×128. The red square (object 1) is off-canvas until it
/// teleports into view at frame 60; a blue bar (object 2) drifts down the
/// right side the whole time.
pub const TELEPORT_FRAME: usize = 60;
/// Post-event segment under the default `⌊T/4⌋` anchor interval: the event
/// falls in the segment opened by anchor 51, which ends before anchor 76.
pub const POST_EVENT_SEGMENT: (usize, usize) = (TELEPORT_FRAME, 75);

pub fn teleport_scene() -> SyntheticScene {
    SyntheticScene {
        width: 128,
        height: 128,
        frames: 100,
        background: [90, 90, 96],
        noise: 12,
        objects: vec![
            SceneObject {
                id: 1,
                label: Some("red square".into()),
                size: [16, 16],
                color: [220, 30, 30],
                trajectory: Trajectory::Linear {
                    start: [-200, 50],
                    velocity: [1, 0],
                },
            },
            SceneObject {
                id: 2,
                label: Some("blue bar".into()),
                size: [20, 10],
                color: [30, 40, 230],
                trajectory: Trajectory::Linear {
                    start: [96, 4],
                    velocity: [0, 1],
                },
            },
        ],
        events: vec![SceneEvent::Teleport {
            object: 1,
            frame: TELEPORT_FRAME,
            to: [20, 50],
        }],
    }
}

pub const TELEPORT_QUERY: &str = "the red square";
pub const TELEPORT_SEED: u64 = 7;

/// Start, velocity, size and colour of one blob.
type Blob = ([i64; 2], [i64; 2], [i64; 2], [u8; 3]);

/// Random frames with a few moving blobs over per-pixel noise.
pub fn random_sequence(seed: u64, len: usize, width: usize, height: usize) -> FrameSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<Blob> = (0..rng.random_range(1..=3))
        .map(|_| {
            (
                [
                    rng.random_range(0..width as i64),
                    rng.random_range(0..height as i64),
                ],
                [rng.random_range(-3..=3), rng.random_range(-3..=3)],
                [
                    rng.random_range(2..=width as i64 / 2),
                    rng.random_range(2..=height as i64 / 2),
                ],
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    let frames = (0..len)
        .map(|t| {
            let mut img = Image::filled(width, height, [0, 0, 0]);
            for y in 0..height {
                for x in 0..width {
                    img.set_pixel(
                        x,
                        y,
                        [
                            rng.random_range(40..80),
                            rng.random_range(40..80),
                            rng.random_range(40..80),
                        ],
                    );
                }
            }
            // Occasional hard cut so some segments carry a real event.
            let cut = rng.random_bool(0.05);
            for (pos, vel, size, color) in &blobs {
                let x0 = pos[0] + vel[0] * t as i64;
                let y0 = pos[1] + vel[1] * t as i64;
                for y in y0..y0 + size[1] {
                    for x in x0..x0 + size[0] {
                        let (x, y) = (
                            x.rem_euclid(width as i64) as usize,
                            y.rem_euclid(height as i64) as usize,
                        );
                        let c = if cut {
                            [255 - color[0], color[2], color[1]]
                        } else {
                            *color
                        };
                        img.set_pixel(x, y, c);
                    }
                }
            }
            img
        })
        .collect();
    FrameSequence::new(format!("rand-{seed}"), frames).unwrap()
}

/// Brute-force feature grid: every pixel is assigned to its cell by floor
/// division (last row/column absorbs the remainder), then per-cell mean luma
/// and mean absolute horizontal/vertical luma differences inside the cell.
pub fn oracle_features(img: &Image, gh: usize, gw: usize) -> Vec<[f64; 3]> {
    let (w, h) = (img.width(), img.height());
    let luma = |x: usize, y: usize| {
        let [r, g, b] = img.pixel(x, y);
        (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
    };
    let cell_of = |v: usize, len: usize, cells: usize| (v / (len / cells)).min(cells - 1);
    let mut sums = vec![[0.0f64; 3]; gh * gw];
    let mut counts = vec![[0usize; 3]; gh * gw];
    for y in 0..h {
        for x in 0..w {
            let (r, c) = (cell_of(y, h, gh), cell_of(x, w, gw));
            let k = r * gw + c;
            sums[k][0] += luma(x, y);
            counts[k][0] += 1;
            if x + 1 < w && cell_of(x + 1, w, gw) == c {
                sums[k][1] += (luma(x + 1, y) - luma(x, y)).abs();
                counts[k][1] += 1;
            }
            if y + 1 < h && cell_of(y + 1, h, gh) == r {
                sums[k][2] += (luma(x, y + 1) - luma(x, y)).abs();
                counts[k][2] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, n)| {
            let mut v = [0.0; 3];
            for ch in 0..3 {
                v[ch] = if n[ch] == 0 {
                    0.0
                } else {
                    s[ch] / n[ch] as f64
                };
            }
            v
        })
        .collect()
}

pub fn oracle_difference(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut sim = 0.0;
    for (p, q) in a.iter().zip(b) {
        let dot = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
        let np = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let nq = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        sim += if p == q {
            1.0
        } else if np == 0.0 || nq == 0.0 {
            0.0
        } else {
            dot / (np * nq)
        };
    }
    1.0 - sim / a.len() as f64
}

pub fn oracle_gaussian(j: usize, n: usize, sigma: f64) -> f64 {
    (-((j as f64 - n as f64 / 2.0).powi(2)) / (2.0 * sigma * sigma)).exp()
}

/// Anchors every `interval` frames from 1; a frame is kept when fewer than
/// `ceil(k% of the queue)` (and fewer than `cap`) queue entries beat it,
/// ranking by score then by lower index. `k_percent` is an integer so the
/// ceiling is exact.
pub fn oracle_sample(
    seq: &FrameSequence,
    grid: (usize, usize),
    interval: usize,
    k_percent: usize,
    cap: usize,
) -> BTreeSet<usize> {
    let len = seq.len();
    let feats: Vec<Vec<[f64; 3]>> = (1..=len)
        .map(|t| oracle_features(seq.frame(t), grid.0, grid.1))
        .collect();
    let anchors: Vec<usize> = (1..=len).step_by(interval).collect();
    let mut queue: Vec<(usize, f64)> = Vec::new();
    for (i, &a) in anchors.iter().enumerate() {
        let end = anchors.get(i + 1).map_or(len, |&next| next - 1);
        let n = end - a + 1;
        let sigma = n as f64 / 4.0;
        for t in a + 1..=end {
            let j = t - a + 1;
            let d = oracle_difference(&feats[a - 1], &feats[t - 1]).clamp(0.0, 2.0);
            queue.push((t, oracle_gaussian(j, n, sigma) * d));
        }
    }
    let keep = (k_percent * queue.len()).div_ceil(100).min(cap);
    let mut out: BTreeSet<usize> = anchors.into_iter().collect();
    for &(t, s) in &queue {
        let better = queue
            .iter()
            .filter(|&&(u, v)| v > s || (v == s && u < t))
            .count();
        if better < keep {
            out.insert(t);
        }
    }
    out
}

/// Boundary pixels by definition: foreground with at least one 4-neighbour
/// that is background or off the canvas.
pub fn oracle_boundary(layer: &[bool], w: usize, h: usize) -> Vec<(i64, i64)> {
    let fg = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && layer[y as usize * w + x as usize]
    };
    let mut out = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if fg(x, y)
                && [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|(dx, dy)| !fg(x + dx, y + dy))
            {
                out.push((x, y));
            }
        }
    }
    out
}

/// Boundary F from all pairwise Euclidean distances between the two
/// boundary point sets.
pub fn oracle_boundary_f(pred: &[bool], gt: &[bool], w: usize, h: usize, tol: f64) -> f64 {
    let pb = oracle_boundary(pred, w, h);
    let gb = oracle_boundary(gt, w, h);
    if pb.is_empty() && gb.is_empty() {
        return 1.0;
    }
    if pb.is_empty() || gb.is_empty() {
        return 0.0;
    }
    let within = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        let hits = from
            .iter()
            .filter(|p| {
                to.iter().any(|q| {
                    let d = (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64).sqrt();
                    d <= tol
                })
            })
            .count();
        hits as f64 / from.len() as f64
    };
    let p = within(&pb, &gb);
    let r = within(&gb, &pb);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Direct moving average: mean of each length-`w` window.
pub fn oracle_moving_average(series: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for start in 0..=series.len() - w {
        let mut s = 0.0;
        for v in &series[start..start + w] {
            s += v;
        }
        out.push(s / w as f64);
    }
    out
}

/// Random blobby mask, `density` ∈ (0, 1).
pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, id: u16) -> MaskFrame {
    let mut m = MaskFrame::empty(w, h);
    for _ in 0..rng.random_range(1..=4) {
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (bw, bh) = (rng.random_range(1..=w / 2), rng.random_range(1..=h / 2));
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                m.set(x, y, id);
            }
        }
    }
    for _ in 0..rng.random_range(0..20) {
        let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
        m.set(x, y, if rng.random_bool(0.5) { id } else { 0 });
    }
    m
}

/// Forwards to an inner tracker and counts opened sessions.
pub struct CountingTracker<T> {
    pub inner: T,
    pub inits: AtomicUsize,
    pub steps: AtomicUsize,
}

impl<T> CountingTracker<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            inits: AtomicUsize::new(0),
            steps: AtomicUsize::new(0),
        }
    }

    pub fn inits(&self) -> usize {
        self.inits.load(Ordering::SeqCst)
    }
}

impl<T: Tracker> Tracker for CountingTracker<T> {
    fn init(
        &self,
        frame: FrameRef<'_>,
        mask: &MaskFrame,
        direction: Direction,
    ) -> Result<String, BackendError> {
        self.inits.fetch_add(1, Ordering::SeqCst);
        self.inner.init(frame, mask, direction)
    }

    fn step(&self, session: &str, frame: FrameRef<'_>) -> Result<MaskFrame, BackendError> {
        self.steps.fetch_add(1, Ordering::SeqCst);
        self.inner.step(session, frame)
    }
}
