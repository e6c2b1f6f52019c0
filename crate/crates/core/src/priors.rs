//! Prior-box grids on feature layers.
//!
//! Every feature cell `(x, y)` carries one prior per (offset pair, width).
//! Its center sits at `((x + o_x) * s, (y + o_y) * s)` in input pixels, where
//! `s` is the cumulative stride of the layer and `o_x`, `o_y` range over the
//! layout's offset vectors. With the single offset `0.5` this reduces to the
//! classic cell-centered SSD layout; denser offsets shrink the effective
//! prior stride without touching the feature-map resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{max_allowed_stride, BoundingBox};
use crate::netgraph::NetAnalysis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorLayout {
    /// Feature grid as `(height, width)` in cells.
    pub feature_size: (u32, u32),
    /// Input pixels per feature cell.
    pub cumulative_stride: f64,
    /// Prior widths in pixels.
    pub widths: Vec<f64>,
    /// Height divided by width.
    pub aspect_ratio: f64,
    pub offsets_x: Vec<f64>,
    pub offsets_y: Vec<f64>,
}

impl PriorLayout {
    /// Cell-centered layout (`o_x = o_y = 0.5`).
    pub fn centered(
        feature_size: (u32, u32),
        cumulative_stride: f64,
        widths: Vec<f64>,
        aspect_ratio: f64,
    ) -> Self {
        PriorLayout {
            feature_size,
            cumulative_stride,
            widths,
            aspect_ratio,
            offsets_x: vec![0.5],
            offsets_y: vec![0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidLayout(m));
        let (h, w) = self.feature_size;
        if h == 0 || w == 0 {
            return bad(format!("feature size {h}x{w} must be positive"));
        }
        if !(self.cumulative_stride > 0.0 && self.cumulative_stride.is_finite()) {
            return bad(format!(
                "stride {} must be positive",
                self.cumulative_stride
            ));
        }
        if self.widths.is_empty() {
            return bad("at least one width is required".into());
        }
        if let Some(w) = self.widths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return bad(format!("width {w} must be positive"));
        }
        if !(self.aspect_ratio > 0.0 && self.aspect_ratio.is_finite()) {
            return bad(format!(
                "aspect ratio {} must be positive",
                self.aspect_ratio
            ));
        }
        for (axis, offs) in [("x", &self.offsets_x), ("y", &self.offsets_y)] {
            if offs.is_empty() {
                return bad(format!("offsets_{axis} must not be empty"));
            }
            if let Some(o) = offs.iter().find(|o| !(0.0..=1.0).contains(*o)) {
                return bad(format!("offset {o} in offsets_{axis} is outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn priors_per_cell(&self) -> usize {
        self.widths.len() * self.offsets_x.len() * self.offsets_y.len()
    }

    pub fn prior_count(&self) -> usize {
        let (h, w) = self.feature_size;
        h as usize * w as usize * self.priors_per_cell()
    }

    /// Checks that every cell origin lies inside an image of `input_size`.
    fn check_input(&self, input_size: (u32, u32)) -> Result<()> {
        let (ih, iw) = input_size;
        let (fh, fw) = self.feature_size;
        let s = self.cumulative_stride;
        if (fh - 1) as f64 * s >= ih as f64 || (fw - 1) as f64 * s >= iw as f64 {
            return Err(Error::InvalidLayout(format!(
                "feature grid {fh}x{fw} at stride {s} does not fit input {ih}x{iw}"
            )));
        }
        Ok(())
    }
}

/// Where a generated prior came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PriorOrigin {
    pub row: u32,
    pub col: u32,
    /// Index into the layout's offset pairs, `iy * offsets_x.len() + ix`.
    pub offset: u32,
    pub width: u32,
    /// Position of the layout within a multi-layout set.
    pub layout: u32,
}

/// Generated priors in input-image pixels with their origin.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorBoxSet {
    pub boxes: Vec<BoundingBox>,
    pub origins: Vec<PriorOrigin>,
}

impl PriorBoxSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Appends another set, renumbering its layout indices after ours.
    pub fn extend(&mut self, other: PriorBoxSet) {
        let base = self.origins.iter().map(|o| o.layout + 1).max().unwrap_or(0);
        self.boxes.extend(other.boxes);
        self.origins
            .extend(other.origins.into_iter().map(|o| PriorOrigin {
                layout: o.layout + base,
                ..o
            }));
    }
}

/// Enumerates the priors of one layout.
///
/// Ordering is row-major over cells, then offset pair (y-major), then width.
/// Boxes may extend past the image border and are not clipped.
pub fn generate(layout: &PriorLayout, input_size: (u32, u32)) -> Result<PriorBoxSet> {
    layout.validate()?;
    layout.check_input(input_size)?;
    let (fh, fw) = layout.feature_size;
    let s = layout.cumulative_stride;
    let n = layout.prior_count();
    let mut boxes = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    let sizes: Vec<(f64, f64)> = layout
        .widths
        .iter()
        .map(|&w| (w, w * layout.aspect_ratio))
        .collect();
    for row in 0..fh {
        for col in 0..fw {
            let mut offset = 0u32;
            for &oy in &layout.offsets_y {
                let cy = (row as f64 + oy) * s;
                for &ox in &layout.offsets_x {
                    let cx = (col as f64 + ox) * s;
                    for (wi, &(w, h)) in sizes.iter().enumerate() {
                        boxes.push(BoundingBox {
                            x_min: cx - 0.5 * w,
                            y_min: cy - 0.5 * h,
                            x_max: cx + 0.5 * w,
                            y_max: cy + 0.5 * h,
                        });
                        origins.push(PriorOrigin {
                            row,
                            col,
                            offset,
                            width: wi as u32,
                            layout: 0,
                        });
                    }
                    offset += 1;
                }
            }
        }
    }
    Ok(PriorBoxSet { boxes, origins })
}

/// Generates several layouts into one set, in order.
pub fn generate_all(layouts: &[PriorLayout], input_size: (u32, u32)) -> Result<PriorBoxSet> {
    let mut set = PriorBoxSet::default();
    for (i, l) in layouts.iter().enumerate() {
        let mut part = generate(l, input_size)?;
        for o in &mut part.origins {
            o.layout = i as u32;
        }
        set.boxes.extend(part.boxes);
        set.origins.extend(part.origins);
    }
    Ok(set)
}

fn min_cyclic_gap(offsets: &[f64]) -> f64 {
    // Offset 1.0 lands on the next cell's 0.0.
    let mut o: Vec<f64> = offsets.iter().map(|v| v.rem_euclid(1.0)).collect();
    o.sort_by(f64::total_cmp);
    o.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let wrap = o[0] + 1.0 - o[o.len() - 1];
    o.windows(2)
        .map(|p| p[1] - p[0])
        .fold(if o.len() == 1 { 1.0 } else { wrap }, f64::min)
}

/// Smallest spacing between neighbouring prior centers along each axis, in
/// pixels. The gap across a cell boundary counts, so a single offset gives
/// back the cumulative stride.
pub fn effective_stride(layout: &PriorLayout) -> Result<(f64, f64)> {
    layout.validate()?;
    Ok((
        layout.cumulative_stride * min_cyclic_gap(&layout.offsets_x),
        layout.cumulative_stride * min_cyclic_gap(&layout.offsets_y),
    ))
}

/// Offsets `step/2, 3 step/2, ...` up to 1, e.g. `0.16` gives
/// `0.08, 0.24, ..., 0.88`.
pub fn spaced_offsets(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::OutOfRange {
            name: "step",
            value: step,
            range: "(0, 1]",
        });
    }
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let v = step * (k as f64 + 0.5);
        if v > 1.0 + 1e-12 {
            break;
        }
        out.push(round_offset(v.min(1.0)));
        k += 1;
    }
    Ok(out)
}

/// `n` offsets evenly spaced at `(i + 0.5) / n`.
pub fn uniform_offsets(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

/// Vertical offsets coupled to the horizontal ones by `o_y = r * o_x`.
///
/// Values above 1 would leave the cell and are dropped, so with `r = 3` the
/// horizontal set `0.08, 0.24, ..., 0.88` maps to `0.24, 0.72`.
pub fn coupled_offsets(offsets_x: &[f64], aspect_ratio: f64) -> Vec<f64> {
    let mut out: Vec<f64> = offsets_x
        .iter()
        .map(|o| round_offset(o * aspect_ratio))
        .filter(|o| (0.0..=1.0).contains(o))
        .collect();
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    out
}

// Keeps decimal offsets such as 0.24 from printing as 0.24000000000000002.
fn round_offset(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

/// Uniform offsets dense enough that the effective stride reaches the bound
/// for `target_iou` on objects of width `min_width` (height `r * min_width`
/// on the vertical axis).
pub fn offsets_for_target(
    cumulative_stride: f64,
    aspect_ratio: f64,
    target_iou: f64,
    min_width: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let advice = max_allowed_stride(target_iou, min_width)?;
    let nx = (cumulative_stride / advice.max_stride_px).ceil().max(1.0) as usize;
    let ny = (cumulative_stride / advice.max_stride_for(min_width * aspect_ratio))
        .ceil()
        .max(1.0) as usize;
    Ok((uniform_offsets(nx), uniform_offsets(ny)))
}

// ---------------------------------------------------------------------------
// `.priorcfg` documents (TOML)

/// One `[[prior]]` entry of a `.priorcfg` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub layer_name: String,
    pub widths: Vec<f64>,
    pub aspect_ratio: f64,
    pub offsets_x: Vec<f64>,
    pub offsets_y: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPriorConfig {
    #[serde(default)]
    prior: Vec<PriorSpec>,
}

pub fn load_priorconfig(text: &str) -> Result<Vec<PriorSpec>> {
    let raw: RawPriorConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if raw.prior.is_empty() {
        return Err(Error::Config("no [[prior]] entries".into()));
    }
    Ok(raw.prior)
}

impl PriorSpec {
    /// Binds the spec to the feature size and stride of its layer.
    pub fn resolve(&self, analysis: &NetAnalysis) -> Result<PriorLayout> {
        let node = analysis
            .get(&self.layer_name)
            .ok_or_else(|| Error::UnknownLayer(self.layer_name.clone()))?;
        let layout = PriorLayout {
            feature_size: (node.feature_height, node.feature_width),
            cumulative_stride: node.cumulative_stride as f64,
            widths: self.widths.clone(),
            aspect_ratio: self.aspect_ratio,
            offsets_x: self.offsets_x.clone(),
            offsets_y: self.offsets_y.clone(),
        };
        layout
            .validate()
            .map_err(|e| Error::Config(format!("prior for '{}': {e}", self.layer_name)))?;
        Ok(layout)
    }
}

pub fn resolve_all(specs: &[PriorSpec], analysis: &NetAnalysis) -> Result<Vec<PriorLayout>> {
    specs.iter().map(|s| s.resolve(analysis)).collect()
}
