//! Axis-aligned box arithmetic and the relation between prior stride and
//! reachable IoU.
//!
//! Boxes live in continuous input-image pixel coordinates. Area is
//! `(x_max - x_min) * (y_max - y_min)`; no pixel-grid rounding is applied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in input-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    /// Builds a box from corner coordinates, rejecting inverted or non-finite corners.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from its top-left corner and size.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    /// Builds a box of size `w x h` centered at `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinate in {self:?}"
            )));
        }
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::InvalidBox(format!("inverted corners in {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Area of the overlap with `other`, zero when disjoint.
    #[inline]
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Applies `v -> scale * v + (tx, ty)` to both corners. `scale` must be positive.
    pub fn affine(&self, scale: f64, tx: f64, ty: f64) -> BoundingBox {
        BoundingBox {
            x_min: scale * self.x_min + tx,
            y_min: scale * self.y_min + ty,
            x_max: scale * self.x_max + tx,
            y_max: scale * self.y_max + ty,
        }
    }
}

/// Intersection over union of two boxes.
///
/// Degenerate boxes never overlap anything: when either box has zero area
/// (and hence the union may be zero) the result is 0, never NaN.
#[inline]
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// IoU reachable under a normalized positioning error `epsilon`.
///
/// Returns `(1 - e)^2 / (1 + e)^2`. Geometrically this is the IoU of two
/// concentric squares of sides `w(1 - e)` and `w(1 + e)`, i.e. every edge of
/// the hypothesis misplaced by `e*w/2` in both axes. A rigid diagonal shift of
/// two equal squares by `e*w` per axis yields `(1 - e)^2 / (2 - (1 - e)^2)`,
/// which is never smaller, so this value is a lower bound for the
/// shift-only case as well.
pub fn iou_under_shift(epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::OutOfRange {
            name: "epsilon",
            value: epsilon,
            range: "[0, 1)",
        });
    }
    let num = (1.0 - epsilon) * (1.0 - epsilon);
    let den = (1.0 + epsilon) * (1.0 + epsilon);
    Ok(num / den)
}

/// Largest normalized positioning error that still reaches `target_iou`.
pub fn max_positioning_error(target_iou: f64) -> Result<f64> {
    if !(target_iou > 0.0 && target_iou < 1.0) {
        return Err(Error::OutOfRange {
            name: "target_iou",
            value: target_iou,
            range: "(0, 1)",
        });
    }
    // (t - 2 sqrt(t) + 1) / (1 - t) == (1 - sqrt t) / (1 + sqrt t); the
    // factored form avoids cancellation near t = 1.
    let s = target_iou.sqrt();
    Ok((1.0 - s) / (1.0 + s))
}

/// Stride recommendation for a target IoU and object width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrideAdvice {
    pub target_iou: f64,
    /// Normalized positioning error.
    pub epsilon: f64,
    /// Allowed stride as a fraction of the object width, `2 * epsilon`.
    pub max_stride_fraction: f64,
    pub object_width: f64,
    /// Allowed stride in pixels for `object_width`.
    pub max_stride_px: f64,
}

impl StrideAdvice {
    /// Allowed stride in pixels for another object width.
    pub fn max_stride_for(&self, object_width: f64) -> f64 {
        self.max_stride_fraction * object_width
    }
}

pub fn max_allowed_stride(target_iou: f64, object_width: f64) -> Result<StrideAdvice> {
    if !(object_width > 0.0 && object_width.is_finite()) {
        return Err(Error::OutOfRange {
            name: "object_width",
            value: object_width,
            range: "(0, inf)",
        });
    }
    let epsilon = max_positioning_error(target_iou)?;
    let fraction = 2.0 * epsilon;
    Ok(StrideAdvice {
        target_iou,
        epsilon,
        max_stride_fraction: fraction,
        object_width,
        max_stride_px: fraction * object_width,
    })
}
