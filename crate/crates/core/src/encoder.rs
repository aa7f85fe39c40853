//! Handcrafted pixel encoder: an `h x w` grid of luma and gradient-energy
//! features used as the motion cue for keyframe sampling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame_store::Image;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("image {width}x{height} is smaller than the {grid_w}x{grid_h} grid")]
    ImageSmallerThanGrid {
        width: usize,
        height: usize,
        grid_w: usize,
        grid_h: usize,
    },
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Mean Rec.601 luma.
    LumaMean,
    /// Mean |luma(x+1, y) - luma(x, y)| over horizontal pairs inside the cell.
    GradXEnergy,
    /// Mean |luma(x, y+1) - luma(x, y)| over vertical pairs inside the cell.
    GradYEnergy,
}

impl Channel {
    pub const ALL: [Channel; 3] = [
        Channel::LumaMean,
        Channel::GradXEnergy,
        Channel::GradYEnergy,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: Vec<Channel>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            grid_h: 16,
            grid_w: 16,
            channels: Channel::ALL.to_vec(),
        }
    }
}

impl EncoderConfig {
    pub fn with_grid(grid_h: usize, grid_w: usize) -> Self {
        Self {
            grid_h,
            grid_w,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(EncoderError::InvalidConfig(
                "grid dimensions must be >= 1".into(),
            ));
        }
        if self.channels.is_empty() {
            return Err(EncoderError::InvalidConfig("channel set is empty".into()));
        }
        Ok(())
    }
}

/// Row-major `grid_h x grid_w x channels` feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    grid_h: usize,
    grid_w: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(grid_h: usize, grid_w: usize, channels: usize, values: Vec<f64>) -> Option<Self> {
        (values.len() == grid_h * grid_w * channels && values.iter().all(|v| v.is_finite()))
            .then_some(Self {
                grid_h,
                grid_w,
                channels,
                values,
            })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.grid_w + col) * self.channels;
        &self.values[i..i + self.channels]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.channels)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.grid_h == other.grid_h
            && self.grid_w == other.grid_w
            && self.channels == other.channels
    }
}

/// Anything that can turn a frame into a [`FeatureMap`].
pub trait FrameEncoder: Send + Sync {
    fn encode(&self, image: &Image) -> Result<FeatureMap, EncoderError>;
}

impl FrameEncoder for EncoderConfig {
    fn encode(&self, image: &Image) -> Result<FeatureMap, EncoderError> {
        encode(image, self)
    }
}

/// Split `len` into `cells` spans of `len / cells`, the last span taking the
/// remainder.
pub(crate) fn cell_spans(len: usize, cells: usize) -> Vec<(usize, usize)> {
    let step = len / cells;
    (0..cells)
        .map(|i| {
            let start = i * step;
            let end = if i + 1 == cells { len } else { start + step };
            (start, end)
        })
        .collect()
}

pub fn encode(image: &Image, cfg: &EncoderConfig) -> Result<FeatureMap, EncoderError> {
    cfg.validate()?;
    let (w, h) = (image.width(), image.height());
    if w < cfg.grid_w || h < cfg.grid_h {
        return Err(EncoderError::ImageSmallerThanGrid {
            width: w,
            height: h,
            grid_w: cfg.grid_w,
            grid_h: cfg.grid_h,
        });
    }
    let luma: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| image.luma(x, y))
        .collect();
    let at = |x: usize, y: usize| luma[y * w + x];

    let rows = cell_spans(h, cfg.grid_h);
    let cols = cell_spans(w, cfg.grid_w);
    let mut values = Vec::with_capacity(cfg.grid_h * cfg.grid_w * cfg.channels.len());
    for &(y0, y1) in &rows {
        for &(x0, x1) in &cols {
            for ch in &cfg.channels {
                let v = match ch {
                    Channel::LumaMean => {
                        let mut sum = 0.0;
                        for y in y0..y1 {
                            for x in x0..x1 {
                                sum += at(x, y);
                            }
                        }
                        sum / ((y1 - y0) * (x1 - x0)) as f64
                    }
                    Channel::GradXEnergy => {
                        let pairs = (x1 - x0 - 1) * (y1 - y0);
                        if pairs == 0 {
                            0.0
                        } else {
                            let mut sum = 0.0;
                            for y in y0..y1 {
                                for x in x0..x1 - 1 {
                                    sum += (at(x + 1, y) - at(x, y)).abs();
                                }
                            }
                            sum / pairs as f64
                        }
                    }
                    Channel::GradYEnergy => {
                        let pairs = (y1 - y0 - 1) * (x1 - x0);
                        if pairs == 0 {
                            0.0
                        } else {
                            let mut sum = 0.0;
                            for y in y0..y1 - 1 {
                                for x in x0..x1 {
                                    sum += (at(x, y + 1) - at(x, y)).abs();
                                }
                            }
                            sum / pairs as f64
                        }
                    }
                };
                values.push(v);
            }
        }
    }
    Ok(FeatureMap {
        grid_h: cfg.grid_h,
        grid_w: cfg.grid_w,
        channels: cfg.channels.len(),
        values,
    })
}
