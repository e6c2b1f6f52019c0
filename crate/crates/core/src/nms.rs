//! Class-independent greedy non-maximum suppression.
//!
//! Boxes are clustered regardless of their state. Each cluster is represented
//! by its highest-confidence member (the seed), whose box, confidence and
//! state argmax become the final detection.

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::records::{DetectionRecord, Id, RawDetectionRecord, State};

pub const DEFAULT_NMS_IOU: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: Id,
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// Off, red, yellow, green.
    pub state_scores: [f64; 4],
}

impl From<RawDetectionRecord> for Detection {
    fn from(r: RawDetectionRecord) -> Self {
        Detection {
            bbox: BoundingBox {
                x_min: r.x,
                y_min: r.y,
                x_max: r.x + r.w,
                y_max: r.y + r.h,
            },
            image_id: r.image_id,
            confidence: r.confidence,
            state_scores: r.state_scores,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalDetection {
    pub image_id: Id,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub state: State,
    /// Input index of the seed.
    pub source: usize,
    /// Number of detections merged into this one, seed included.
    pub cluster_size: usize,
}

impl FinalDetection {
    pub fn to_record(&self) -> DetectionRecord {
        DetectionRecord {
            image_id: self.image_id.clone(),
            x: self.bbox.x_min,
            y: self.bbox.y_min,
            w: self.bbox.width(),
            h: self.bbox.height(),
            confidence: self.confidence,
            state: self.state,
        }
    }
}

/// Indices of `dets` sorted by confidence descending, ties by lower index.
pub fn confidence_order(confidences: impl Iterator<Item = f64>) -> Vec<usize> {
    let conf: Vec<f64> = confidences.collect();
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    order
}

/// Greedy NMS over the detections of one image.
///
/// Output is sorted by confidence descending.
pub fn suppress(dets: &[Detection], iou_threshold: f64) -> Result<Vec<FinalDetection>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::OutOfRange {
            name: "iou_threshold",
            value: iou_threshold,
            range: "(0, 1]",
        });
    }
    if let Some(d) = dets.iter().find(|d| d.image_id != dets[0].image_id) {
        return Err(Error::MixedImages(
            dets[0].image_id.to_string(),
            d.image_id.to_string(),
        ));
    }
    if let Some(d) = dets
        .iter()
        .find(|d| !d.confidence.is_finite() || d.state_scores.iter().any(|s| !s.is_finite()))
    {
        return Err(Error::InvalidParameter(format!(
            "non-finite score in detection {:?}",
            d.bbox
        )));
    }
    let order = confidence_order(dets.iter().map(|d| d.confidence));
    let mut absorbed = vec![false; dets.len()];
    let mut out = Vec::new();
    for (pos, &seed) in order.iter().enumerate() {
        if absorbed[seed] {
            continue;
        }
        let mut size = 1;
        for &other in &order[pos + 1..] {
            if !absorbed[other] && iou(&dets[seed].bbox, &dets[other].bbox) >= iou_threshold {
                absorbed[other] = true;
                size += 1;
            }
        }
        let d = &dets[seed];
        out.push(FinalDetection {
            image_id: d.image_id.clone(),
            bbox: d.bbox,
            confidence: d.confidence,
            state: State::argmax(&d.state_scores),
            source: seed,
            cluster_size: size,
        });
    }
    Ok(out)
}
