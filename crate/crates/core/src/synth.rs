//! Deterministic synthetic label/detection sets.
//!
//! Images are grouped into sequences of consecutive frames. Each sequence
//! holds a few traffic lights that persist across its frames as tracks, so
//! per-track statistics are meaningful. Detections are jittered copies of
//! the ground truths (dropped with `miss_rate`) plus false positives placed
//! away from every object.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::records::{DetectionRecord, GroundTruthRecord, Id, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WidthDistribution {
    Uniform {
        min: f64,
        max: f64,
    },
    /// Log-normal in pixels, clipped to `[1, largest width that fits]`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
}

impl WidthDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            WidthDistribution::Uniform { min, max } => min > 0.0 && min <= max && max.is_finite(),
            WidthDistribution::LogNormal { mu, sigma } => {
                mu.is_finite() && sigma > 0.0 && sigma.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid width distribution {self}"
            )))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, cap: f64) -> f64 {
        match *self {
            WidthDistribution::Uniform { min, max } if min == max => min,
            WidthDistribution::Uniform { min, max } => rng.random_range(min..=max),
            WidthDistribution::LogNormal { mu, sigma } => {
                let d = LogNormal::new(mu, sigma).expect("validated");
                d.sample(rng).clamp(1.0, cap.max(1.0))
            }
        }
    }
}

impl fmt::Display for WidthDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WidthDistribution::Uniform { min, max } => write!(f, "uniform:{min},{max}"),
            WidthDistribution::LogNormal { mu, sigma } => write!(f, "lognormal:{mu},{sigma}"),
        }
    }
}

/// Parses `uniform:MIN,MAX` or `lognormal:MU,SIGMA`.
impl FromStr for WidthDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse width distribution '{s}'"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let (a, b) = args.split_once(',').ok_or_else(bad)?;
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        let d = match kind {
            "uniform" => WidthDistribution::Uniform { min: a, max: b },
            "lognormal" => WidthDistribution::LogNormal { mu: a, sigma: b },
            _ => return Err(bad()),
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    pub widths: WidthDistribution,
    /// Expected false positives per ground truth; may exceed 1.
    pub fp_rate: f64,
    /// Probability that a ground truth gets no detection.
    pub miss_rate: f64,
    pub image_size: (u32, u32),
    pub frames_per_sequence: usize,
    pub max_objects: usize,
    /// Height divided by width of the objects.
    pub aspect_ratio: f64,
    /// Probability that a true detection reports the correct state.
    pub state_accuracy: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_images: 100,
            widths: WidthDistribution::Uniform {
                min: 3.0,
                max: 40.0,
            },
            fp_rate: 0.1,
            miss_rate: 0.1,
            image_size: (1024, 2048),
            frames_per_sequence: 10,
            max_objects: 3,
            aspect_ratio: 1.0 / 0.3,
            state_accuracy: 0.9,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.widths.validate()?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return bad(format!("miss_rate {} is outside [0, 1]", self.miss_rate));
        }
        if !(0.0..=1.0).contains(&self.state_accuracy) {
            return bad(format!(
                "state_accuracy {} is outside [0, 1]",
                self.state_accuracy
            ));
        }
        if !(self.fp_rate >= 0.0 && self.fp_rate.is_finite()) {
            return bad(format!("fp_rate {} must be non-negative", self.fp_rate));
        }
        if self.frames_per_sequence == 0 || self.max_objects == 0 {
            return bad("frames_per_sequence and max_objects must be positive".into());
        }
        if !(self.aspect_ratio > 0.0 && self.aspect_ratio.is_finite()) {
            return bad(format!(
                "aspect_ratio {} must be positive",
                self.aspect_ratio
            ));
        }
        let (h, w) = self.image_size;
        let cap = self.width_cap();
        let too_small = match self.widths {
            WidthDistribution::Uniform { max, .. } => max > cap,
            WidthDistribution::LogNormal { .. } => cap < 1.0,
        };
        if too_small {
            return bad(format!("image size {h}x{w} is too small for the objects"));
        }
        Ok(())
    }
}

impl SynthConfig {
    /// Widest object that leaves room for jitter in its column.
    fn width_cap(&self) -> f64 {
        let (h, w) = self.image_size;
        (w as f64 / (2.0 * self.max_objects as f64)).min(h as f64 / (2.0 * self.aspect_ratio))
    }
}

struct Track {
    id: String,
    width: f64,
    state: State,
    x: f64,
    y: f64,
    dx: f64,
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Generates the dataset frame by frame, handing each record to a sink.
///
/// Labels of an image are emitted before its detections.
pub fn generate(
    cfg: &SynthConfig,
    mut on_label: impl FnMut(GroundTruthRecord) -> Result<()>,
    mut on_detection: impl FnMut(DetectionRecord) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (ih, iw) = (cfg.image_size.0 as f64, cfg.image_size.1 as f64);
    let cap = cfg.width_cap();
    let mut produced = 0;
    let mut seq = 0;
    while produced < cfg.n_images {
        let n_obj = rng.random_range(1..=cfg.max_objects);
        let slot = iw / n_obj as f64;
        let mut tracks: Vec<Track> = (0..n_obj)
            .map(|k| {
                let width = round3(cfg.widths.sample(&mut rng, cap));
                let height = round3(width * cfg.aspect_ratio);
                let room = (slot - 2.0 * width).max(0.0);
                Track {
                    id: format!("{k}"),
                    width,
                    state: State::ALL[rng.random_range(0..4)],
                    x: k as f64 * slot + rng.random_range(0.0..=room),
                    y: rng.random_range(0.0..=(ih - 2.0 * height)),
                    dx: rng.random_range(-1.0..=1.0),
                }
            })
            .collect();
        let seq_id = Id(format!("s{seq:05}"));
        for frame in 0..cfg.frames_per_sequence {
            if produced == cfg.n_images {
                break;
            }
            let image_id = Id(format!("s{seq:05}_f{frame:03}"));
            let mut gt_boxes = Vec::with_capacity(tracks.len());
            for (k, t) in tracks.iter_mut().enumerate() {
                let height = round3(t.width * cfg.aspect_ratio);
                let lo = k as f64 * slot;
                let hi = (lo + slot - 2.0 * t.width).max(lo);
                t.x = (t.x + t.dx).clamp(lo, hi);
                let x = round3(t.x);
                let y = round3(t.y);
                gt_boxes.push(BoundingBox::from_xywh(x, y, t.width, height)?);
                on_label(GroundTruthRecord {
                    image_id: image_id.clone(),
                    x: Some(x),
                    y: Some(y),
                    w: Some(t.width),
                    h: Some(height),
                    state: Some(t.state),
                    track_id: Some(Id(t.id.clone())),
                    tags: vec!["front".into(), "vehicle".into()],
                    sequence_id: Some(seq_id.clone()),
                    city: None,
                })?;
            }
            for (t, gt) in tracks.iter().zip(&gt_boxes) {
                let missed = rng.random_bool(cfg.miss_rate);
                let jx = rng.random_range(-0.05..=0.05) * t.width;
                let jy = rng.random_range(-0.05..=0.05) * t.width;
                let conf = rng.random_range(0.3..=1.0);
                let state = if rng.random_bool(cfg.state_accuracy) {
                    t.state
                } else {
                    State::ALL[(t.state.index() + rng.random_range(1..4)) % 4]
                };
                if !missed {
                    on_detection(DetectionRecord {
                        image_id: image_id.clone(),
                        x: round3(gt.x_min + jx),
                        y: round3(gt.y_min + jy),
                        w: t.width,
                        h: round3(gt.height()),
                        confidence: round3(conf),
                        state,
                    })?;
                }
                let fp_count =
                    cfg.fp_rate.floor() as usize + rng.random_bool(cfg.fp_rate.fract()) as usize;
                for _ in 0..fp_count {
                    let w = round3(cfg.widths.sample(&mut rng, cap));
                    let h = round3(w * cfg.aspect_ratio);
                    let mut placed = None;
                    for _ in 0..32 {
                        let b = BoundingBox::from_xywh(
                            round3(rng.random_range(0.0..=(iw - w))),
                            round3(rng.random_range(0.0..=(ih - h))),
                            w,
                            h,
                        )?;
                        if gt_boxes.iter().all(|g| iou(g, &b) == 0.0) {
                            placed = Some(b);
                            break;
                        }
                    }
                    let conf = rng.random_range(0.0..=0.7);
                    if let Some(b) = placed {
                        on_detection(DetectionRecord {
                            image_id: image_id.clone(),
                            x: b.x_min,
                            y: b.y_min,
                            w,
                            h,
                            confidence: round3(conf),
                            state: State::ALL[rng.random_range(0..4)],
                        })?;
                    }
                }
            }
            produced += 1;
        }
        seq += 1;
    }
    Ok(())
}

/// Boxes placed uniformly inside an image of `image_size` (height, width),
/// with widths from `widths` and heights `aspect_ratio` times larger.
pub fn random_boxes(
    seed: u64,
    n: usize,
    widths: WidthDistribution,
    aspect_ratio: f64,
    image_size: (u32, u32),
) -> Result<Vec<BoundingBox>> {
    widths.validate()?;
    let (ih, iw) = (image_size.0 as f64, image_size.1 as f64);
    let cap = iw.min(ih / aspect_ratio);
    if let WidthDistribution::Uniform { max, .. } = widths {
        if max > cap {
            return Err(Error::InvalidParameter(format!(
                "width {max} does not fit an image of {}x{}",
                image_size.0, image_size.1
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let w = widths.sample(&mut rng, cap);
            let h = w * aspect_ratio;
            let x = rng.random_range(0.0..=(iw - w));
            let y = rng.random_range(0.0..=(ih - h));
            BoundingBox::from_xywh(x, y, w, h)
        })
        .collect()
}

/// Collects a whole dataset in memory.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<(Vec<GroundTruthRecord>, Vec<DetectionRecord>)> {
    let mut labels = Vec::new();
    let mut dets = Vec::new();
    generate(
        cfg,
        |l| {
            labels.push(l);
            Ok(())
        },
        |d| {
            dets.push(d);
            Ok(())
        },
    )?;
    Ok((labels, dets))
}
