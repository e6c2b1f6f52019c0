//! Detection scoring: don't-care filtering, TP/FP/FN bookkeeping, ROC over
//! confidence, LAMR, recall per object width and recall per track.
//!
//! Assignment is greedy by descending confidence, so the outcome of a
//! detection never depends on detections of lower confidence. Each image is
//! therefore scored once with all detections, and the curve at any
//! confidence threshold follows by counting outcomes above it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::records::{DetectionRecord, GroundTruthRecord, Id, State};

/// FPPI sample points of the log-average miss rate.
pub const LAMR_FPPI: [f64; 3] = [0.1, 1.0, 10.0];

/// Which ground truths are excluded from both FP and FN accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DcRule {
    /// Don't-care unless tagged `required`, or when carrying any `excluded` tag.
    Tags {
        required: String,
        excluded: Vec<String>,
    },
    /// Only the minimum-width rule applies.
    None,
}

impl Default for DcRule {
    fn default() -> Self {
        DcRule::Tags {
            required: "front".into(),
            excluded: ["pedestrian", "cyclist", "tram", "bus"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl DcRule {
    pub fn is_dc(&self, tags: &[String]) -> bool {
        match self {
            DcRule::Tags { required, excluded } => {
                !tags.iter().any(|t| t == required) || tags.iter().any(|t| excluded.contains(t))
            }
            DcRule::None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Ground truths narrower than this many pixels are don't-care.
    pub min_width: f64,
    pub dc_rule: DcRule,
    /// Restrict to one state: other-state ground truths become don't-care
    /// and other-state detections are dropped.
    pub state_filter: Option<State>,
    /// A detection may only claim a ground truth of its own state.
    pub require_state_match: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.3,
            min_width: 0.0,
            dc_rule: DcRule::default(),
            state_filter: None,
            require_state_match: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::OutOfRange {
                name: "iou_threshold",
                value: self.iou_threshold,
                range: "(0, 1)",
            });
        }
        if !(self.min_width >= 0.0 && self.min_width.is_finite()) {
            return Err(Error::OutOfRange {
                name: "min_width",
                value: self.min_width,
                range: "[0, inf)",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BoundingBox,
    pub state: State,
    pub dc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetBox {
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub state: State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    /// Claimed the ground truth with this index.
    TruePositive(usize),
    FalsePositive,
    /// Unassigned but on a don't-care object.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Per ground truth, the detection that claimed it.
    pub gt_hits: Vec<Option<usize>>,
    pub dispositions: Vec<Disposition>,
}

/// Scores one image with every detection counted.
pub fn score_image(gts: &[GtBox], dets: &[DetBox], cfg: &EvalConfig) -> ImageScore {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    let mut gt_hits = vec![None; gts.len()];
    let mut dispositions = vec![Disposition::FalsePositive; dets.len()];
    let t = cfg.iou_threshold;
    for &d in &order {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.dc || gt_hits[g].is_some() || (cfg.require_state_match && gt.state != det.state) {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox);
            if v >= t && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        dispositions[d] = match best {
            Some((g, _)) => {
                gt_hits[g] = Some(d);
                Disposition::TruePositive(g)
            }
            None if gts.iter().any(|gt| gt.dc && iou(&det.bbox, &gt.bbox) >= t) => {
                Disposition::Ignored
            }
            None => Disposition::FalsePositive,
        };
    }
    let tp = gt_hits.iter().filter(|h| h.is_some()).count();
    let fp = dispositions
        .iter()
        .filter(|d| **d == Disposition::FalsePositive)
        .count();
    let non_dc = gts.iter().filter(|g| !g.dc).count();
    ImageScore {
        tp,
        fp,
        fn_: non_dc - tp,
        gt_hits,
        dispositions,
    }
}

/// Uniform thresholds `k / steps` for `k = 1..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceGrid {
    pub steps: usize,
}

impl ConfidenceGrid {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter(
                "grid needs at least one step".into(),
            ));
        }
        Ok(ConfidenceGrid { steps })
    }

    pub fn threshold(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }

    /// Number of grid thresholds that `confidence` reaches.
    pub fn level(&self, confidence: f64) -> usize {
        if !(confidence > 0.0) {
            return 0;
        }
        let mut k = ((confidence * self.steps as f64).floor() as usize).min(self.steps);
        while k > 0 && self.threshold(k) > confidence {
            k -= 1;
        }
        while k < self.steps && self.threshold(k + 1) <= confidence {
            k += 1;
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fppi: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub images: u64,
    pub non_dc_gts: u64,
    /// Ascending threshold.
    pub points: Vec<RocPoint>,
}

fn miss_rate(tp: u64, fn_: u64) -> f64 {
    if tp + fn_ == 0 {
        0.0
    } else {
        fn_ as f64 / (tp + fn_) as f64
    }
}

impl RocCurve {
    /// Builds a curve from per-level counts, where `tp_levels[k]` counts true
    /// positives whose confidence reaches exactly `k` grid thresholds.
    fn from_levels(
        grid: ConfidenceGrid,
        images: u64,
        non_dc_gts: u64,
        tp_levels: &[u64],
        fp_levels: &[u64],
    ) -> Self {
        let mut points = Vec::with_capacity(grid.steps);
        let (mut tp, mut fp) = (0u64, 0u64);
        for k in (1..=grid.steps).rev() {
            tp += tp_levels[k];
            fp += fp_levels[k];
            let fn_ = non_dc_gts - tp;
            points.push(RocPoint {
                threshold: grid.threshold(k),
                tp,
                fp,
                fn_,
                fppi: if images == 0 {
                    0.0
                } else {
                    fp as f64 / images as f64
                },
                miss_rate: miss_rate(tp, fn_),
            });
        }
        points.reverse();
        RocCurve {
            images,
            non_dc_gts,
            points,
        }
    }

    /// Miss rate at an FPPI target: the point with the largest FPPI not above
    /// the target (lowest miss rate among ties), else the point of smallest
    /// FPPI.
    pub fn miss_rate_at(&self, fppi: f64) -> Option<f64> {
        let by_key = |a: &&RocPoint, b: &&RocPoint| {
            a.fppi
                .total_cmp(&b.fppi)
                .then(b.miss_rate.total_cmp(&a.miss_rate))
        };
        let below = self.points.iter().filter(|p| p.fppi <= fppi).max_by(by_key);
        let point = match below {
            Some(p) => p,
            None => self.points.iter().min_by(|a, b| {
                a.fppi
                    .total_cmp(&b.fppi)
                    .then(a.miss_rate.total_cmp(&b.miss_rate))
            })?,
        };
        Some(point.miss_rate)
    }

    /// Index of the point whose FPPI is closest to `fppi`, lowest threshold
    /// among ties.
    pub fn operating_point(&self, fppi: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.points.iter().enumerate() {
            let d = (p.fppi - fppi).abs();
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Mean miss rate at FPPI 0.1, 1 and 10.
pub fn lamr(curve: &RocCurve) -> Option<f64> {
    let mut sum = 0.0;
    for f in LAMR_FPPI {
        sum += curve.miss_rate_at(f)?;
    }
    Some(sum / LAMR_FPPI.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthBin {
    pub width_from: f64,
    pub width_to: f64,
    pub total: u64,
    pub detected: u64,
    /// `None` for empty bins.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackStat {
    pub track: String,
    pub occurrences: u64,
    pub detected: u64,
    pub p_track: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackRecall {
    pub threshold: f64,
    pub tracks: Vec<TrackStat>,
    /// Track counts with `P_TRACK` in `[0, 0.1)`, ..., `[0.9, 1.0]`.
    pub histogram: [u64; 10],
    /// Share of tracks with `P_TRACK >= 0.9`.
    pub share_high: f64,
    /// Non-dc ground truths without a track id.
    pub untracked: u64,
}

/// Per non-dc ground truth, what is needed after scoring.
#[derive(Debug, Clone, Copy)]
struct GtOutcome {
    width: f64,
    track: Option<u32>,
    /// Confidence of the detection that claimed it.
    hit: Option<f64>,
}

#[derive(Debug, Default)]
struct ImageData {
    gts: Vec<GtBox>,
    tracks: Vec<Option<u32>>,
    dets: Vec<DetBox>,
}

/// Streaming evaluator: feed all labels, then all detections, then finish.
#[derive(Debug)]
pub struct Evaluator {
    cfg: EvalConfig,
    index: HashMap<Id, u32>,
    images: Vec<ImageData>,
    track_index: HashMap<String, u32>,
    track_names: Vec<String>,
    dropped_detections: u64,
}

impl Evaluator {
    pub fn new(cfg: EvalConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Evaluator {
            cfg,
            index: HashMap::new(),
            images: Vec::new(),
            track_index: HashMap::new(),
            track_names: Vec::new(),
            dropped_detections: 0,
        })
    }

    fn image_slot(&mut self, id: &Id) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i as usize;
        }
        let i = self.images.len();
        self.index.insert(id.clone(), i as u32);
        self.images.push(ImageData::default());
        i
    }

    /// Registers an image, plus its object unless the record is image-only.
    pub fn add_label(&mut self, rec: &GroundTruthRecord) -> Result<()> {
        let slot = self.image_slot(&rec.image_id);
        let Some(bbox) = rec.bbox() else {
            if rec.is_image_only() {
                return Ok(());
            }
            return Err(Error::InvalidBox(format!(
                "incomplete box for image '{}'",
                rec.image_id
            )));
        };
        // An object without a state can't be scored, so it only shields
        // overlapping detections.
        let state = rec.state.unwrap_or(State::Off);
        let dc = rec.state.is_none()
            || self.cfg.dc_rule.is_dc(&rec.tags)
            || bbox.width() < self.cfg.min_width
            || self.cfg.state_filter.is_some_and(|s| s != state);
        let track = rec.track_id.as_ref().map(|t| {
            let key = match &rec.sequence_id {
                Some(s) => format!("{s}/{t}"),
                None => t.to_string(),
            };
            match self.track_index.get(&key) {
                Some(&i) => i,
                None => {
                    let i = self.track_names.len() as u32;
                    self.track_index.insert(key.clone(), i);
                    self.track_names.push(key);
                    i
                }
            }
        });
        let img = &mut self.images[slot];
        img.gts.push(GtBox { bbox, state, dc });
        img.tracks.push(track);
        Ok(())
    }

    pub fn add_detection(&mut self, rec: &DetectionRecord) -> Result<()> {
        let Some(&slot) = self.index.get(&rec.image_id) else {
            return Err(Error::UnknownImage(rec.image_id.to_string()));
        };
        if self.cfg.state_filter.is_some_and(|s| s != rec.state) {
            self.dropped_detections += 1;
            return Ok(());
        }
        self.images[slot as usize].dets.push(DetBox {
            bbox: rec.bbox(),
            confidence: rec.confidence,
            state: rec.state,
        });
        Ok(())
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn finish(self, grid: ConfidenceGrid) -> EvalReport {
        let mut tp_levels = vec![0u64; grid.steps + 1];
        let mut fp_levels = vec![0u64; grid.steps + 1];
        let mut outcomes = Vec::new();
        let mut non_dc = 0u64;
        let (mut tp_all, mut fp_all, mut ignored) = (0u64, 0u64, 0u64);
        for img in &self.images {
            let score = score_image(&img.gts, &img.dets, &self.cfg);
            for (d, disp) in score.dispositions.iter().enumerate() {
                let level = grid.level(img.dets[d].confidence);
                match disp {
                    Disposition::TruePositive(_) => {
                        tp_levels[level] += 1;
                        tp_all += 1;
                    }
                    Disposition::FalsePositive => {
                        fp_levels[level] += 1;
                        fp_all += 1;
                    }
                    Disposition::Ignored => ignored += 1,
                }
            }
            for (g, gt) in img.gts.iter().enumerate() {
                if gt.dc {
                    continue;
                }
                non_dc += 1;
                outcomes.push(GtOutcome {
                    width: gt.bbox.width(),
                    track: img.tracks[g],
                    hit: score.gt_hits[g].map(|d| img.dets[d].confidence),
                });
            }
        }
        let images = self.images.len() as u64;
        let roc = RocCurve::from_levels(grid, images, non_dc, &tp_levels, &fp_levels);
        EvalReport {
            summary: EvalSummary {
                images,
                ground_truths: self.images.iter().map(|i| i.gts.len() as u64).sum(),
                non_dc_gts: non_dc,
                detections: self.images.iter().map(|i| i.dets.len() as u64).sum(),
                dropped_detections: self.dropped_detections,
                tp_all,
                fp_all,
                ignored,
            },
            grid,
            roc,
            outcomes,
            track_names: self.track_names,
        }
    }
}

/// Counts with every detection included, independent of the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub images: u64,
    pub ground_truths: u64,
    pub non_dc_gts: u64,
    pub detections: u64,
    /// Detections removed by the state filter.
    pub dropped_detections: u64,
    pub tp_all: u64,
    pub fp_all: u64,
    pub ignored: u64,
}

#[derive(Debug)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub grid: ConfidenceGrid,
    pub roc: RocCurve,
    outcomes: Vec<GtOutcome>,
    track_names: Vec<String>,
}

impl EvalReport {
    pub fn lamr(&self) -> Option<f64> {
        lamr(&self.roc)
    }

    /// Threshold of the ROC point whose FPPI is closest to `fppi`.
    pub fn operating_threshold(&self, fppi: f64) -> Option<f64> {
        self.roc
            .operating_point(fppi)
            .map(|i| self.roc.points[i].threshold)
    }

    fn detected_at(o: &GtOutcome, threshold: f64) -> bool {
        o.hit.is_some_and(|c| c >= threshold)
    }

    /// Recall per width bin `[k * bin_width, (k + 1) * bin_width)` at the
    /// given confidence threshold. Bins run from 0 to the widest object.
    pub fn recall_by_width(&self, threshold: f64, bin_width: f64) -> Result<Vec<WidthBin>> {
        if !(bin_width >= 1.0 && bin_width.is_finite()) {
            return Err(Error::OutOfRange {
                name: "bin_width",
                value: bin_width,
                range: "[1, inf)",
            });
        }
        let mut bins: Vec<(u64, u64)> = Vec::new();
        for o in &self.outcomes {
            let b = (o.width / bin_width).floor() as usize;
            if bins.len() <= b {
                bins.resize(b + 1, (0, 0));
            }
            bins[b].0 += 1;
            if Self::detected_at(o, threshold) {
                bins[b].1 += 1;
            }
        }
        Ok(bins
            .into_iter()
            .enumerate()
            .map(|(i, (total, detected))| WidthBin {
                width_from: i as f64 * bin_width,
                width_to: (i + 1) as f64 * bin_width,
                total,
                detected,
                recall: (total > 0).then(|| detected as f64 / total as f64),
            })
            .collect())
    }

    /// Per-track detection frequency at the given confidence threshold.
    pub fn track_recall(&self, threshold: f64) -> TrackRecall {
        let mut counts = vec![(0u64, 0u64); self.track_names.len()];
        let mut untracked = 0;
        for o in &self.outcomes {
            match o.track {
                Some(t) => {
                    counts[t as usize].0 += 1;
                    if Self::detected_at(o, threshold) {
                        counts[t as usize].1 += 1;
                    }
                }
                None => untracked += 1,
            }
        }
        let mut tracks: Vec<TrackStat> = counts
            .into_iter()
            .enumerate()
            .filter(|(_, (n, _))| *n > 0)
            .map(|(i, (occurrences, detected))| TrackStat {
                track: self.track_names[i].clone(),
                occurrences,
                detected,
                p_track: detected as f64 / occurrences as f64,
            })
            .collect();
        tracks.sort_by(|a, b| a.track.cmp(&b.track));
        let mut histogram = [0u64; 10];
        for t in &tracks {
            histogram[((t.p_track * 10.0).floor() as usize).min(9)] += 1;
        }
        let share_high = if tracks.is_empty() {
            0.0
        } else {
            histogram[9] as f64 / tracks.len() as f64
        };
        TrackRecall {
            threshold,
            tracks,
            histogram,
            share_high,
            untracked,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::from_xywh(x, y, w, h).unwrap()
    }

    fn gt(x: f64, dc: bool) -> GtBox {
        GtBox {
            bbox: b(x, 0.0, 4.0, 10.0),
            state: State::Red,
            dc,
        }
    }

    fn det(x: f64, c: f64) -> DetBox {
        DetBox {
            bbox: b(x, 0.0, 4.0, 10.0),
            confidence: c,
            state: State::Red,
        }
    }

    #[test]
    fn single_cases() {
        let cfg = EvalConfig::default();
        let s = score_image(&[gt(0.0, false)], &[det(0.0, 0.9)], &cfg);
        assert_eq!((s.tp, s.fp, s.fn_), (1, 0, 0));
        let s = score_image(&[gt(0.0, false)], &[det(0.0, 0.9), det(0.5, 0.8)], &cfg);
        assert_eq!((s.tp, s.fp, s.fn_), (1, 1, 0));
        let s = score_image(&[gt(0.0, true)], &[det(0.0, 0.9)], &cfg);
        assert_eq!((s.tp, s.fp, s.fn_), (0, 0, 0));
        assert_eq!(s.dispositions, vec![Disposition::Ignored]);
    }

    #[test]
    fn higher_confidence_claims_first() {
        // The weaker detection overlaps better but comes second.
        let cfg = EvalConfig::default();
        let s = score_image(&[gt(0.0, false)], &[det(0.0, 0.5), det(1.0, 0.9)], &cfg);
        assert_eq!(s.gt_hits, vec![Some(1)]);
        assert_eq!(s.dispositions[0], Disposition::FalsePositive);
    }

    #[test]
    fn state_match_mode() {
        let cfg = EvalConfig {
            require_state_match: true,
            ..EvalConfig::default()
        };
        let mut d = det(0.0, 0.9);
        d.state = State::Green;
        let s = score_image(&[gt(0.0, false)], &[d], &cfg);
        assert_eq!((s.tp, s.fp, s.fn_), (0, 1, 1));
    }

    #[test]
    fn default_dc_rule() {
        let r = DcRule::default();
        let tags = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(!r.is_dc(&tags(&["front", "vehicle"])));
        assert!(r.is_dc(&tags(&["left", "vehicle"])));
        assert!(r.is_dc(&tags(&["front", "pedestrian"])));
        assert!(r.is_dc(&[]));
        assert!(!DcRule::None.is_dc(&[]));
    }

    #[test]
    fn grid_levels() {
        let g = ConfidenceGrid::new(10).unwrap();
        assert_eq!(g.level(0.0), 0);
        assert_eq!(g.level(0.09), 0);
        assert_eq!(g.level(0.1), 1);
        assert_eq!(g.level(0.3), 3);
        assert_eq!(g.level(1.0), 10);
        let g = ConfidenceGrid::new(1000).unwrap();
        for k in 0..=1000 {
            assert_eq!(g.level(g.threshold(k)), k);
        }
    }

    fn curve(points: &[(f64, f64)]) -> RocCurve {
        RocCurve {
            images: 1,
            non_dc_gts: 1,
            points: points
                .iter()
                .map(|&(fppi, miss_rate)| RocPoint {
                    threshold: 0.0,
                    tp: 0,
                    fp: 0,
                    fn_: 0,
                    fppi,
                    miss_rate,
                })
                .collect(),
        }
    }

    #[test]
    fn lamr_examples() {
        assert!(
            (lamr(&curve(&[(0.0, 0.3), (5.0, 0.3), (50.0, 0.3)])).unwrap() - 0.3).abs() < 1e-15
        );
        let c = curve(&[(10.0, 0.3), (1.0, 0.6), (0.1, 0.9)]);
        assert!((lamr(&c).unwrap() - 0.6).abs() < 1e-15);
        // No point at or below 0.1: clamp to the lowest-FPPI point.
        let c = curve(&[(0.5, 0.8), (2.0, 0.4)]);
        assert!((lamr(&c).unwrap() - (0.8 + 0.8 + 0.4) / 3.0).abs() < 1e-15);
        assert_eq!(lamr(&curve(&[])), None);
    }

    fn label(img: &str, x: f64, tags: &[&str], track: Option<&str>) -> GroundTruthRecord {
        GroundTruthRecord {
            image_id: img.into(),
            x: Some(x),
            y: Some(0.0),
            w: Some(4.0),
            h: Some(10.0),
            state: Some(State::Red),
            track_id: track.map(Id::from),
            tags: tags.iter().map(|s| s.to_string()).collect(),
            sequence_id: None,
            city: None,
        }
    }

    fn detection(img: &str, x: f64, c: f64) -> DetectionRecord {
        DetectionRecord {
            image_id: img.into(),
            x,
            y: 0.0,
            w: 4.0,
            h: 10.0,
            confidence: c,
            state: State::Red,
        }
    }

    #[test]
    fn perfect_and_empty_detectors() {
        let labels: Vec<_> = (0..5)
            .map(|i| label(&format!("i{i}"), 10.0 * i as f64, &["front"], Some("t")))
            .collect();
        let mut ev = Evaluator::new(EvalConfig::default()).unwrap();
        labels.iter().for_each(|l| ev.add_label(l).unwrap());
        let empty = Evaluator::new(EvalConfig::default()).unwrap();
        let mut empty = empty;
        labels.iter().for_each(|l| empty.add_label(l).unwrap());
        for (i, l) in labels.iter().enumerate() {
            ev.add_detection(&detection(&format!("i{i}"), l.x.unwrap(), 1.0))
                .unwrap();
        }
        let grid = ConfidenceGrid::new(100).unwrap();
        let r = ev.finish(grid);
        assert!(r
            .roc
            .points
            .iter()
            .all(|p| p.miss_rate == 0.0 && p.fppi == 0.0));
        assert_eq!(r.track_recall(0.5).tracks[0].p_track, 1.0);
        let r = empty.finish(grid);
        assert!(r
            .roc
            .points
            .iter()
            .all(|p| p.miss_rate == 1.0 && p.fppi == 0.0));
        assert_eq!(r.lamr(), Some(1.0));
    }

    #[test]
    fn unknown_image_rejected() {
        let mut ev = Evaluator::new(EvalConfig::default()).unwrap();
        ev.add_label(&label("a", 0.0, &["front"], None)).unwrap();
        assert!(matches!(
            ev.add_detection(&detection("b", 0.0, 0.5)),
            Err(Error::UnknownImage(_))
        ));
    }

    #[test]
    fn stateless_object_is_dont_care() {
        let mut ev = Evaluator::new(EvalConfig::default()).unwrap();
        let mut l = label("a", 0.0, &["front"], None);
        l.state = None;
        ev.add_label(&l).unwrap();
        ev.add_detection(&detection("a", 0.0, 0.9)).unwrap();
        let r = ev.finish(ConfidenceGrid::new(10).unwrap());
        assert_eq!(r.roc.non_dc_gts, 0);
        assert!(r.roc.points.iter().all(|p| p.tp == 0 && p.fp == 0));
    }

    #[test]
    fn track_of_ten_frames() {
        let mut ev = Evaluator::new(EvalConfig::default()).unwrap();
        for f in 0..10 {
            ev.add_label(&label(&format!("f{f}"), 0.0, &["front"], Some("t1")))
                .unwrap();
        }
        ev.add_label(&label("f0", 50.0, &["front"], None)).unwrap();
        for f in 0..9 {
            ev.add_detection(&detection(&format!("f{f}"), 0.0, 0.8))
                .unwrap();
        }
        let tr = ev
            .finish(ConfidenceGrid::new(10).unwrap())
            .track_recall(0.5);
        assert_eq!(tr.tracks.len(), 1);
        assert!((tr.tracks[0].p_track - 0.9).abs() < 1e-15);
        assert_eq!(tr.histogram[9], 1);
        assert_eq!(tr.share_high, 1.0);
        assert_eq!(tr.untracked, 1);
    }

    fn arb_image() -> impl Strategy<Value = (Vec<GtBox>, Vec<DetBox>)> {
        let gts = prop::collection::vec(
            (0.0..40.0f64, 0.0..40.0f64, 2.0..12.0f64, any::<bool>()),
            0..6,
        );
        let dets =
            prop::collection::vec((0.0..40.0f64, 0.0..40.0f64, 2.0..12.0f64, 0u32..=10), 0..10);
        (gts, dets).prop_map(|(g, d)| {
            (
                g.into_iter()
                    .map(|(x, y, w, dc)| GtBox {
                        bbox: b(x, y, w, 2.5 * w),
                        state: State::Green,
                        dc,
                    })
                    .collect(),
                d.into_iter()
                    .map(|(x, y, w, c)| DetBox {
                        bbox: b(x, y, w, 2.5 * w),
                        confidence: c as f64 / 10.0,
                        state: State::Green,
                    })
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn conservation((gts, dets) in arb_image()) {
            let s = score_image(&gts, &dets, &EvalConfig::default());
            prop_assert_eq!(s.tp + s.fn_, gts.iter().filter(|g| !g.dc).count());
            prop_assert!(s.tp + s.fp <= dets.len());
        }

        #[test]
        fn prefix_property((gts, dets) in arb_image(), k in 0usize..=10) {
            // Scoring only the detections above a threshold gives the same
            // outcomes as scoring all of them and counting above it.
            let cfg = EvalConfig::default();
            let c = k as f64 / 10.0;
            let full = score_image(&gts, &dets, &cfg);
            let kept: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].confidence >= c).collect();
            let sub: Vec<DetBox> = kept.iter().map(|&i| dets[i]).collect();
            let part = score_image(&gts, &sub, &cfg);
            for (j, &i) in kept.iter().enumerate() {
                prop_assert_eq!(part.dispositions[j], full.dispositions[i]);
            }
        }

        #[test]
        fn dc_objects_without_detections_change_nothing((gts, dets) in arb_image(), extra in 1usize..4) {
            let cfg = EvalConfig::default();
            let mut more = gts.clone();
            for i in 0..extra {
                more.push(GtBox { bbox: b(500.0 + 20.0 * i as f64, 500.0, 4.0, 10.0), state: State::Red, dc: true });
            }
            let a = score_image(&gts, &dets, &cfg);
            let m = score_image(&more, &dets, &cfg);
            prop_assert_eq!((a.tp, a.fp, a.fn_), (m.tp, m.fp, m.fn_));
        }

        #[test]
        fn roc_monotone(images in prop::collection::vec(arb_image(), 1..6)) {
            let mut ev = Evaluator::new(EvalConfig { dc_rule: DcRule::None, ..EvalConfig::default() }).unwrap();
            for (i, (gts, dets)) in images.iter().enumerate() {
                let id = format!("img{i}");
                ev.add_label(&GroundTruthRecord { image_id: id.as_str().into(), x: None, y: None, w: None, h: None, state: None, track_id: None, tags: vec![], sequence_id: None, city: None }).unwrap();
                for g in gts {
                    let mut l = label(&id, g.bbox.x_min, &[], None);
                    l.y = Some(g.bbox.y_min);
                    l.w = Some(g.bbox.width());
                    l.h = Some(g.bbox.height());
                    ev.add_label(&l).unwrap();
                }
                for d in dets {
                    let mut r = detection(&id, d.bbox.x_min, d.confidence);
                    r.y = d.bbox.y_min;
                    r.w = d.bbox.width();
                    r.h = d.bbox.height();
                    ev.add_detection(&r).unwrap();
                }
            }
            let r = ev.finish(ConfidenceGrid::new(20).unwrap());
            for w in r.roc.points.windows(2) {
                prop_assert!(w[1].fppi <= w[0].fppi);
                prop_assert!(w[1].miss_rate >= w[0].miss_rate);
            }
            for p in &r.roc.points {
                prop_assert_eq!(p.tp + p.fn_, r.roc.non_dc_gts);
            }
            let l = r.lamr().unwrap();
            let s: Vec<f64> = LAMR_FPPI.iter().map(|&f| r.roc.miss_rate_at(f).unwrap()).collect();
            prop_assert!(s.iter().cloned().fold(f64::INFINITY, f64::min) <= l + 1e-15);
            prop_assert!(l <= s.iter().cloned().fold(0.0, f64::max) + 1e-15);
        }
    }
}
