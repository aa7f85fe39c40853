//! Grounder prompt template and the model-reply format it asks for.

use std::path::Path;

use serde::Deserialize;

use super::{BackendError, FrameGrounding, GroundedObject};
use crate::frame_store::BoundingBox;

/// Default confidence-level prompt. `{query}` is replaced by the user query.
pub const DEFAULT_TEMPLATE: &str = "\
You are given one or more video frames and a description of target objects.
Target description: \"{query}\"

For each frame, locate every object matching the description and rate how
confident you are that the frame shows the target clearly and completely.

Answer with JSON only, in exactly this form:
{\"objects\": [{\"id\": <1..N>, \"label\": \"<name>\", \"box\": [x1, y1, x2, y2], \"present\": true|false}],
 \"confidence_level\": <1..5>,
 \"reasoning\": \"<one or two sentences>\"}

Confidence levels:
1 - target absent or unrecognizable
2 - target mostly occluded or cut off
3 - target partially visible
4 - target clearly visible with minor occlusion
5 - target fully visible, unambiguous

Use pixel coordinates with x2/y2 exclusive. Keep object ids consistent across
frames and mark objects that are not visible with \"present\": false.
";

pub fn render(template: &str, query: &str) -> String {
    template.replace("{query}", query)
}

pub fn load_template(path: impl AsRef<Path>) -> std::io::Result<String> {
    std::fs::read_to_string(path)
}

/// Map a discrete confidence level to a score: 1..5 → 0.1, 0.3, 0.5, 0.7, 0.9.
pub fn confidence_from_level(level: u8) -> Option<f64> {
    const SCORES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
    SCORES.get(usize::from(level).checked_sub(1)?).copied()
}

#[derive(Deserialize)]
struct Reply {
    objects: Vec<ReplyObject>,
    confidence_level: u8,
    #[serde(default)]
    reasoning: String,
}

#[derive(Deserialize)]
struct ReplyObject {
    id: u16,
    #[serde(default)]
    label: String,
    #[serde(rename = "box")]
    bbox: [i64; 4],
    #[serde(default = "yes")]
    present: bool,
}

fn yes() -> bool {
    true
}

/// Parse a model reply for frame `t`. Surrounding prose and code fences are
/// tolerated; the first `{ ... }` block is taken as the answer.
pub fn parse_reply(t: usize, text: &str) -> Result<FrameGrounding, BackendError> {
    let start = text
        .find('{')
        .ok_or_else(|| BackendError::Schema("reply contains no JSON object".into()))?;
    let end = text
        .rfind('}')
        .filter(|&e| e > start)
        .ok_or_else(|| BackendError::Schema("reply JSON object is not closed".into()))?;
    let reply: Reply = serde_json::from_str(&text[start..=end])
        .map_err(|e| BackendError::Schema(format!("grounder reply: {e}")))?;
    let confidence = confidence_from_level(reply.confidence_level).ok_or_else(|| {
        BackendError::Schema(format!(
            "confidence_level must be 1..5, got {}",
            reply.confidence_level
        ))
    })?;
    Ok(FrameGrounding {
        t,
        objects: reply
            .objects
            .into_iter()
            .map(|o| GroundedObject {
                id: o.id,
                label: o.label,
                bbox: BoundingBox::from(o.bbox),
                present: o.present,
            })
            .collect(),
        confidence,
        reasoning: reply.reasoning,
    })
}
