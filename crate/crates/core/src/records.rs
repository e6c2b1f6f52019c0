//! Record types of the JSON-lines interchange formats.
//!
//! Boxes are written as top-left corner plus size (`x`, `y`, `w`, `h`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Signal state of a traffic light.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum State {
    Off,
    Red,
    Yellow,
    Green,
}

impl State {
    pub const ALL: [State; 4] = [State::Off, State::Red, State::Yellow, State::Green];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<State> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            State::Off => "off",
            State::Red => "red",
            State::Yellow => "yellow",
            State::Green => "green",
        }
    }

    /// Index of the largest score; ties go to the earlier state.
    pub fn argmax(scores: &[f64; 4]) -> State {
        let mut best = 0;
        for i in 1..4 {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        State::ALL[best]
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for State {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(State::Off),
            "red" => Ok(State::Red),
            "yellow" => Ok(State::Yellow),
            "green" => Ok(State::Green),
            other => Err(Error::UnknownState(other.to_owned())),
        }
    }
}

impl Serialize for State {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identifier that may be written as a JSON string or integer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Id(pub String);

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Id {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Id {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            S(String),
            I(i64),
            U(u64),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::S(s) => Id(s),
            Repr::I(i) => Id(i.to_string()),
            Repr::U(u) => Id(u.to_string()),
        })
    }
}

impl From<&str> for Id {
    fn from(s: &str) -> Self {
        Id(s.to_owned())
    }
}

impl From<String> for Id {
    fn from(s: String) -> Self {
        Id(s)
    }
}

/// Validation applied to every record after JSON decoding.
pub trait Record: serde::de::DeserializeOwned {
    fn check(&self) -> std::result::Result<(), String>;
}

fn xywh_box(x: f64, y: f64, w: f64, h: f64) -> std::result::Result<BoundingBox, String> {
    if !(w >= 0.0 && h >= 0.0) {
        return Err(format!(
            "field 'w'/'h': size must be non-negative, got {w}x{h}"
        ));
    }
    BoundingBox::from_xywh(x, y, w, h).map_err(|e| e.to_string())
}

/// One annotated object, or a bare image declaration when the box is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub image_id: Id,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<State>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<Id>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_id: Option<Id>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
}

impl GroundTruthRecord {
    /// The object's box, or `None` for an image declaration.
    pub fn bbox(&self) -> Option<BoundingBox> {
        match (self.x, self.y, self.w, self.h) {
            (Some(x), Some(y), Some(w), Some(h)) => xywh_box(x, y, w, h).ok(),
            _ => None,
        }
    }

    pub fn is_image_only(&self) -> bool {
        self.x.is_none() && self.y.is_none() && self.w.is_none() && self.h.is_none()
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

impl Record for GroundTruthRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.is_image_only() {
            return Ok(());
        }
        let (Some(x), Some(y), Some(w), Some(h)) = (self.x, self.y, self.w, self.h) else {
            return Err("fields 'x', 'y', 'w', 'h' must be given together".into());
        };
        xywh_box(x, y, w, h)?;
        if self.state.is_none() {
            return Err("missing field `state`".into());
        }
        Ok(())
    }
}

/// A final detection after NMS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: Id,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub state: State,
}

impl DetectionRecord {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox {
            x_min: self.x,
            y_min: self.y,
            x_max: self.x + self.w,
            y_max: self.y + self.h,
        }
    }
}

fn check_unit(name: &str, v: f64) -> std::result::Result<(), String> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("field '{name}': {v} is outside [0, 1]"))
    }
}

impl Record for DetectionRecord {
    fn check(&self) -> std::result::Result<(), String> {
        xywh_box(self.x, self.y, self.w, self.h)?;
        check_unit("confidence", self.confidence)
    }
}

/// A detection before NMS, carrying all four state scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDetectionRecord {
    pub image_id: Id,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    /// Scores for off, red, yellow, green.
    pub state_scores: [f64; 4],
}

impl Record for RawDetectionRecord {
    fn check(&self) -> std::result::Result<(), String> {
        xywh_box(self.x, self.y, self.w, self.h)?;
        check_unit("confidence", self.confidence)?;
        for v in self.state_scores {
            check_unit("state_scores", v)?;
        }
        Ok(())
    }
}

/// Raw network outputs for one prior of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRowRecord {
    pub image_id: Id,
    /// Background and foreground logits.
    pub conf: [f64; 2],
    /// Encoded localization offsets.
    pub loc: [f64; 4],
    /// Off, red, yellow, green logits.
    pub state: [f64; 4],
}

impl Record for PredictionRowRecord {
    fn check(&self) -> std::result::Result<(), String> {
        let finite = self
            .conf
            .iter()
            .chain(&self.loc)
            .chain(&self.state)
            .all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err("non-finite value in prediction row".into())
        }
    }
}
