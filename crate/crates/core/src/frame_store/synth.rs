//! Synthetic rectangle scenes with analytic masks and boxes.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    write_frames, write_masks, BoundingBox, FrameSequence, FrameStoreError, Image, MaskFrame,
    MaskSequence, ObjectId,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Trajectory {
    /// `start + velocity * (t - 1)`.
    Linear {
        start: [i64; 2],
        #[serde(default)]
        velocity: [i64; 2],
    },
    /// One top-left position per frame.
    Explicit { positions: Vec<[i64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: ObjectId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// `[width, height]` in pixels.
    pub size: [i64; 2],
    pub color: [u8; 3],
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneEvent {
    /// From `frame` on, the object is displaced so that it sits at `to` at
    /// `frame` and keeps its velocity afterwards.
    Teleport {
        object: ObjectId,
        frame: usize,
        to: [i64; 2],
    },
    /// Hidden before `frame`.
    Appear { object: ObjectId, frame: usize },
    /// Hidden from `frame` on.
    Disappear { object: ObjectId, frame: usize },
}

fn default_background() -> [u8; 3] {
    [96, 96, 96]
}

/// Scene description. Objects are painted in list order, later ones on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    #[serde(default = "default_background")]
    pub background: [u8; 3],
    /// Amplitude of the static, seeded background texture.
    #[serde(default)]
    pub noise: u8,
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub events: Vec<SceneEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub t: usize,
    #[serde(rename = "box")]
    pub bbox: Option<BoundingBox>,
    pub visible: bool,
    /// Visible but clipped by the canvas or covered by another object.
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub id: ObjectId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub frames: Vec<FrameAnnotation>,
}

/// Per-frame ground-truth boxes and visibility, keyed by object id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Annotations {
    pub objects: Vec<ObjectAnnotation>,
}

impl Annotations {
    pub fn object(&self, id: ObjectId) -> Option<&ObjectAnnotation> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn frame(&self, id: ObjectId, t: usize) -> Option<&FrameAnnotation> {
        self.object(id)?.frames.iter().find(|f| f.t == t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FrameStoreError> {
        let text = fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| FrameStoreError::Decode {
            file: path.as_ref().to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Output of [`SyntheticScene::render`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRender {
    pub frames: FrameSequence,
    pub masks: MaskSequence,
    pub annotations: Annotations,
}

impl SyntheticRender {
    /// Write `frames/`, `masks/` and `annotations.json` under `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<(), FrameStoreError> {
        let dir = dir.as_ref();
        write_frames(&self.frames, dir.join("frames"))?;
        write_masks(&self.masks, dir.join("masks"))?;
        let json = serde_json::to_string_pretty(&self.annotations)
            .map_err(|e| FrameStoreError::InvalidScene(e.to_string()))?;
        fs::write(dir.join("annotations.json"), json)?;
        Ok(())
    }
}

impl SyntheticScene {
    pub fn from_json(text: &str) -> Result<Self, FrameStoreError> {
        serde_json::from_str(text).map_err(|e| FrameStoreError::InvalidScene(e.to_string()))
    }

    fn validate(&self) -> Result<(), FrameStoreError> {
        let bad = |m: String| Err(FrameStoreError::InvalidScene(m));
        if self.objects.is_empty() {
            return bad("scene has zero objects".into());
        }
        if self.frames == 0 {
            return bad("scene has zero frames".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("canvas {}x{} is empty", self.width, self.height));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if o.id == 0 {
                return bad("object id 0 is reserved for background".into());
            }
            if !ids.insert(o.id) {
                return bad(format!("duplicate object id {}", o.id));
            }
            if o.size[0] <= 0 || o.size[1] <= 0 {
                return bad(format!("object {} has non-positive size", o.id));
            }
            if let Trajectory::Explicit { positions } = &o.trajectory {
                if positions.len() != self.frames {
                    return bad(format!(
                        "object {} has {} positions for {} frames",
                        o.id,
                        positions.len(),
                        self.frames
                    ));
                }
            }
        }
        for ev in &self.events {
            let (object, frame) = match ev {
                SceneEvent::Teleport { object, frame, .. }
                | SceneEvent::Appear { object, frame }
                | SceneEvent::Disappear { object, frame } => (*object, *frame),
            };
            if !ids.contains(&object) {
                return bad(format!("event references unknown object {object}"));
            }
            if frame == 0 || frame > self.frames {
                return bad(format!("event frame {frame} outside 1..={}", self.frames));
            }
        }
        Ok(())
    }

    /// Top-left corner of `obj` at frame `t`, or `None` when hidden.
    fn placement(&self, obj: &SceneObject, t: usize) -> Option<[i64; 2]> {
        let mut pos = self.placement_without_events(obj, t);
        let mut visible = true;
        for ev in &self.events {
            match *ev {
                SceneEvent::Teleport { object, frame, to } if object == obj.id && t >= frame => {
                    let at_event = self.placement_without_events(obj, frame);
                    pos[0] += to[0] - at_event[0];
                    pos[1] += to[1] - at_event[1];
                }
                SceneEvent::Appear { object, frame } if object == obj.id && t < frame => {
                    visible = false;
                }
                SceneEvent::Disappear { object, frame } if object == obj.id && t >= frame => {
                    visible = false;
                }
                _ => {}
            }
        }
        visible.then_some(pos)
    }

    fn placement_without_events(&self, obj: &SceneObject, t: usize) -> [i64; 2] {
        match &obj.trajectory {
            Trajectory::Linear { start, velocity } => {
                let k = (t - 1) as i64;
                [start[0] + velocity[0] * k, start[1] + velocity[1] * k]
            }
            Trajectory::Explicit { positions } => positions[t - 1],
        }
    }

    fn background_image(&self, seed: u64) -> Image {
        let mut img = Image::filled(self.width, self.height, self.background);
        if self.noise == 0 {
            return img;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = i16::from(self.noise);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut px = self.background;
                for c in &mut px {
                    let delta: i16 = rng.random_range(-amp..=amp);
                    *c = (i16::from(*c) + delta).clamp(0, 255) as u8;
                }
                img.set_pixel(x, y, px);
            }
        }
        img
    }

    /// Render frames, masks and annotations. Pure in `(self, seed)`; the seed
    /// only drives the static background texture.
    pub fn render(&self, seed: u64) -> Result<SyntheticRender, FrameStoreError> {
        self.validate()?;
        let background = self.background_image(seed);
        let mut frames = Vec::with_capacity(self.frames);
        let mut masks = Vec::with_capacity(self.frames);
        for t in 1..=self.frames {
            let mut img = background.clone();
            let mut mask = MaskFrame::empty(self.width, self.height);
            for obj in &self.objects {
                let Some([x, y]) = self.placement(obj, t) else {
                    continue;
                };
                let b = BoundingBox::new(x, y, x + obj.size[0], y + obj.size[1])
                    .clamp(self.width, self.height);
                for py in b.y1..b.y2 {
                    for px in b.x1..b.x2 {
                        img.set_pixel(px as usize, py as usize, obj.color);
                    }
                }
                mask.fill_box(b, obj.id);
            }
            frames.push(img);
            masks.push(mask);
        }

        let objects = self
            .objects
            .iter()
            .map(|obj| ObjectAnnotation {
                id: obj.id,
                label: obj.label.clone(),
                frames: masks
                    .iter()
                    .enumerate()
                    .map(|(i, m)| {
                        let bbox = m.bbox(obj.id);
                        let area = m.area(obj.id) as i64;
                        FrameAnnotation {
                            t: i + 1,
                            bbox,
                            visible: bbox.is_some(),
                            truncated: bbox.is_some() && area < obj.size[0] * obj.size[1],
                        }
                    })
                    .collect(),
            })
            .collect();

        Ok(SyntheticRender {
            frames: FrameSequence::new("synthetic", frames)?,
            masks: MaskSequence::new(masks)?,
            annotations: Annotations { objects },
        })
    }
}
