//! Best-effort conversion of DTLD label files to ground-truth records.
//!
//! Two object encodings are understood: an `attributes` map (`direction`,
//! `pictogram`, `state`, ...) and the older six-digit `class_id`, whose
//! digits are direction, relevance, orientation, lamp count, color and
//! pictogram. Objects whose state cannot be determined are skipped and
//! counted.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::records::{GroundTruthRecord, Id, State};

#[derive(Debug, Default, PartialEq)]
pub struct DtldImport {
    pub labels: Vec<GroundTruthRecord>,
    pub images: usize,
    pub skipped_objects: usize,
}

fn direction_tag(d: &str) -> Option<&'static str> {
    match d {
        "front" => Some("front"),
        "back" => Some("back"),
        "left" => Some("left"),
        "right" => Some("right"),
        _ => None,
    }
}

fn audience_tag(pictogram: &str) -> &'static str {
    match pictogram {
        "pedestrian" => "pedestrian",
        "bicycle" | "cyclist" | "pedestrian_bicycle" => "cyclist",
        "tram" => "tram",
        "bus" => "bus",
        _ => "vehicle",
    }
}

fn state_of(s: &str) -> Option<State> {
    match s {
        "off" => Some(State::Off),
        "red" | "red_yellow" => Some(State::Red),
        "yellow" => Some(State::Yellow),
        "green" => Some(State::Green),
        _ => None,
    }
}

/// Decodes `(tags, state)` from a six-digit class id.
fn from_class_id(id: u64) -> (Vec<String>, Option<State>) {
    let digits: Vec<u64> = (0..6).rev().map(|i| id / 10u64.pow(i) % 10).collect();
    let direction = ["", "front", "back", "left", "right"]
        .get(digits[0] as usize)
        .copied()
        .unwrap_or("");
    let state = match digits[4] {
        0 => Some(State::Off),
        1 | 3 => Some(State::Red),
        2 => Some(State::Yellow),
        4 => Some(State::Green),
        _ => None,
    };
    let audience = match digits[5] {
        6 => "pedestrian",
        7 | 8 => "cyclist",
        _ => "vehicle",
    };
    let mut tags = vec![audience.to_string()];
    if !direction.is_empty() {
        tags.insert(0, direction.to_string());
    }
    (tags, state)
}

fn num(v: &Value, key: &str) -> Option<f64> {
    v.get(key).and_then(Value::as_f64)
}

fn id_of(v: &Value) -> Option<Id> {
    match v {
        Value::String(s) => Some(Id(s.clone())),
        Value::Number(n) => Some(Id(n.to_string())),
        _ => None,
    }
}

/// Converts the text of one DTLD label file.
pub fn import_dtld(text: &str) -> Result<DtldImport> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("DTLD file: {e}")))?;
    let images = root
        .get("images")
        .and_then(Value::as_array)
        .or_else(|| root.as_array())
        .ok_or_else(|| Error::Config("DTLD file: no 'images' array".into()))?;
    let mut out = DtldImport::default();
    for img in images {
        let path = img
            .get("image_path")
            .or_else(|| img.get("path"))
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config("DTLD file: image without 'image_path'".into()))?;
        out.images += 1;
        let image_id = Id(path.to_string());
        let sequence_id = Path::new(path)
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| Id(s.to_string_lossy().into_owned()));
        let city = img.get("city").and_then(Value::as_str).map(String::from);
        out.labels.push(GroundTruthRecord {
            image_id: image_id.clone(),
            x: None,
            y: None,
            w: None,
            h: None,
            state: None,
            track_id: None,
            tags: Vec::new(),
            sequence_id: sequence_id.clone(),
            city: city.clone(),
        });
        let objects = img
            .get("labels")
            .or_else(|| img.get("objects"))
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        for obj in objects {
            let (Some(x), Some(y), Some(w), Some(h)) = (
                num(obj, "x"),
                num(obj, "y"),
                num(obj, "w").or_else(|| num(obj, "width")),
                num(obj, "h").or_else(|| num(obj, "height")),
            ) else {
                out.skipped_objects += 1;
                continue;
            };
            let (tags, state) = if let Some(attr) = obj.get("attributes") {
                let s = |k: &str| attr.get(k).and_then(Value::as_str).unwrap_or("");
                let mut tags: Vec<String> = direction_tag(s("direction"))
                    .into_iter()
                    .map(String::from)
                    .collect();
                tags.push(audience_tag(s("pictogram")).to_string());
                (tags, state_of(s("state")))
            } else if let Some(c) = obj.get("class_id").and_then(Value::as_u64) {
                from_class_id(c)
            } else {
                (Vec::new(), None)
            };
            let Some(state) = state else {
                out.skipped_objects += 1;
                continue;
            };
            if !(w > 0.0 && h > 0.0) {
                out.skipped_objects += 1;
                continue;
            }
            out.labels.push(GroundTruthRecord {
                image_id: image_id.clone(),
                x: Some(x),
                y: Some(y),
                w: Some(w),
                h: Some(h),
                state: Some(state),
                track_id: obj
                    .get("track_id")
                    .or_else(|| obj.get("unique_id"))
                    .and_then(id_of),
                tags,
                sequence_id: sequence_id.clone(),
                city: city.clone(),
            });
        }
    }
    Ok(out)
}
