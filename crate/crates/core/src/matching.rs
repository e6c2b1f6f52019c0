//! Prior/ground-truth matching and coverage statistics.
//!
//! Matching runs in two phases:
//!
//! 1. Bipartite: repeatedly take the globally best remaining (prior, GT) pair
//!    with positive IoU and bind both. Ties prefer the lower prior index, then
//!    the lower GT index.
//! 2. Threshold: every prior still free is bound to its best GT if that IoU
//!    reaches the threshold. Ties prefer the lower GT index.
//!
//! A GT is *covered* when its best prior reaches the threshold. Don't-care
//! objects must be removed by the caller before matching.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::priors::PriorBoxSet;

/// Per-prior outcome. Only priors overlapping some GT are stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorMatch {
    pub prior: usize,
    pub matched_gt: Option<usize>,
    /// Best IoU of this prior against any GT.
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GtMatch {
    /// Prior of maximal IoU (lowest index on ties), if any overlaps.
    pub best_prior: Option<usize>,
    pub best_iou: f64,
    pub covered: bool,
    /// Prior bound in the bipartite phase.
    pub bipartite_prior: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub threshold: f64,
    pub prior_count: usize,
    /// Sparse per-prior entries sorted by prior index.
    pub priors: Vec<PriorMatch>,
    pub gts: Vec<GtMatch>,
}

impl MatchResult {
    /// Matched GT and best IoU of any prior; untouched priors report `(None, 0)`.
    pub fn prior(&self, index: usize) -> (Option<usize>, f64) {
        match self.priors.binary_search_by_key(&index, |p| p.prior) {
            Ok(i) => (self.priors[i].matched_gt, self.priors[i].iou),
            Err(_) => (None, 0.0),
        }
    }

    /// `(prior, gt)` for every matched prior, in prior order.
    pub fn matched_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.priors
            .iter()
            .filter_map(|p| p.matched_gt.map(|g| (p.prior, g)))
    }

    pub fn matched_count(&self) -> usize {
        self.priors
            .iter()
            .filter(|p| p.matched_gt.is_some())
            .count()
    }

    pub fn covered_count(&self) -> usize {
        self.gts.iter().filter(|g| g.covered).count()
    }
}

/// Uniform bucket grid over the centers of a subset of priors.
#[derive(Debug, Clone)]
struct Grid {
    origin: (f64, f64),
    cell: (f64, f64),
    dims: (usize, usize),
    // CSR layout: bucket b holds prior ids in starts[b]..starts[b + 1].
    starts: Vec<u32>,
    ids: Vec<u32>,
    max_half: (f64, f64),
}

impl Grid {
    fn new(boxes: &[BoundingBox], members: &[u32]) -> Self {
        let (mut lo_x, mut lo_y) = (f64::INFINITY, f64::INFINITY);
        let (mut hi_x, mut hi_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let (mut mw, mut mh) = (0.0f64, 0.0f64);
        for &i in members {
            let b = &boxes[i as usize];
            let (cx, cy) = b.center();
            lo_x = lo_x.min(cx);
            lo_y = lo_y.min(cy);
            hi_x = hi_x.max(cx);
            hi_y = hi_y.max(cy);
            mw = mw.max(b.width());
            mh = mh.max(b.height());
        }
        let mut cell = (mw.max(1.0), mh.max(1.0));
        let span = |c: (f64, f64)| {
            (
                ((hi_x - lo_x) / c.0).floor() as usize + 1,
                ((hi_y - lo_y) / c.1).floor() as usize + 1,
            )
        };
        // Keep the bucket count proportional to the member count.
        while span(cell).0.saturating_mul(span(cell).1) > 4 * members.len() + 64 {
            cell = (2.0 * cell.0, 2.0 * cell.1);
        }
        let (nx, ny) = span(cell);
        let bucket = |b: &BoundingBox| {
            let (cx, cy) = b.center();
            let ix = (((cx - lo_x) / cell.0) as usize).min(nx - 1);
            let iy = (((cy - lo_y) / cell.1) as usize).min(ny - 1);
            iy * nx + ix
        };
        let mut counts = vec![0u32; nx * ny + 1];
        for &i in members {
            counts[bucket(&boxes[i as usize]) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut ids = vec![0u32; members.len()];
        for &i in members {
            let k = bucket(&boxes[i as usize]);
            ids[fill[k] as usize] = i;
            fill[k] += 1;
        }
        Grid {
            origin: (lo_x, lo_y),
            cell,
            dims: (nx, ny),
            starts,
            ids,
            max_half: (0.5 * mw, 0.5 * mh),
        }
    }

    fn query(&self, boxes: &[BoundingBox], gt: &BoundingBox, hits: &mut Vec<(usize, f64)>) {
        let (nx, ny) = self.dims;
        let reach_x = self.max_half.0 + 0.5 * gt.width();
        let reach_y = self.max_half.1 + 0.5 * gt.height();
        let (cx, cy) = gt.center();
        // Out-of-grid queries clamp to the border buckets; the IoU test
        // rejects anything that does not overlap.
        let clamp = |v: f64, o: f64, c: f64, n: usize| {
            ((v - o) / c).floor().clamp(0.0, (n - 1) as f64) as usize
        };
        let x0 = clamp(cx - reach_x, self.origin.0, self.cell.0, nx);
        let x1 = clamp(cx + reach_x, self.origin.0, self.cell.0, nx);
        let y0 = clamp(cy - reach_y, self.origin.1, self.cell.1, ny);
        let y1 = clamp(cy + reach_y, self.origin.1, self.cell.1, ny);
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                let b = iy * nx + ix;
                for &p in &self.ids[self.starts[b] as usize..self.starts[b + 1] as usize] {
                    let v = iou(&boxes[p as usize], gt);
                    if v > 0.0 {
                        hits.push((p as usize, v));
                    }
                }
            }
        }
    }
}

/// Spatial index over a prior set. Priors are grouped by size so that small
/// priors are not scanned with the reach of the largest ones.
#[derive(Debug, Clone)]
pub struct Matcher<'a> {
    priors: &'a PriorBoxSet,
    grids: Vec<Grid>,
}

/// Above this many distinct prior sizes, all priors share one grid.
const MAX_SIZE_GROUPS: usize = 256;

impl<'a> Matcher<'a> {
    pub fn new(priors: &'a PriorBoxSet) -> Self {
        let boxes = &priors.boxes;
        let mut groups: BTreeMap<(u64, u64), Vec<u32>> = BTreeMap::new();
        for (i, b) in boxes.iter().enumerate() {
            groups
                .entry((b.width().to_bits(), b.height().to_bits()))
                .or_default()
                .push(i as u32);
        }
        let grids = if groups.len() > MAX_SIZE_GROUPS {
            let all: Vec<u32> = (0..boxes.len() as u32).collect();
            vec![Grid::new(boxes, &all)]
        } else {
            groups.values().map(|m| Grid::new(boxes, m)).collect()
        };
        Matcher { priors, grids }
    }

    /// Best-overlapping prior of `gt` and its IoU; ties prefer the lower
    /// prior index. Agrees with `GtMatch::best_prior` and `best_iou`.
    pub fn best_overlap(&self, gt: &BoundingBox) -> (Option<usize>, f64) {
        let mut hits = Vec::new();
        for grid in &self.grids {
            grid.query(&self.priors.boxes, gt, &mut hits);
        }
        let mut best = (None, 0.0);
        for (p, v) in hits {
            let better = match best {
                (None, _) => true,
                (Some(q), b) => v > b || (v == b && p < q),
            };
            if better {
                best = (Some(p), v);
            }
        }
        best
    }

    /// Runs both matching phases against `gts`.
    pub fn run(&self, gts: &[BoundingBox], threshold: f64) -> Result<MatchResult> {
        check_threshold(threshold)?;
        // Sparse (prior, gt, iou) triples with positive overlap.
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        let mut hits: Vec<(usize, f64)> = Vec::new();
        for (g, gt) in gts.iter().enumerate() {
            hits.clear();
            for grid in &self.grids {
                grid.query(&self.priors.boxes, gt, &mut hits);
            }
            pairs.extend(hits.iter().map(|&(p, v)| (p, g, v)));
        }
        Ok(assemble(self.priors.len(), gts.len(), pairs, threshold))
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "threshold",
            value: threshold,
            range: "(0, 1)",
        })
    }
}

/// Max-heap order: higher IoU first, then lower prior, then lower GT.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    iou: f64,
    prior: usize,
    gt: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.iou
            .total_cmp(&other.iou)
            .then(other.prior.cmp(&self.prior))
            .then(other.gt.cmp(&self.gt))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

fn assemble(
    prior_count: usize,
    gt_count: usize,
    mut pairs: Vec<(usize, usize, f64)>,
    threshold: f64,
) -> MatchResult {
    let mut gts = vec![
        GtMatch {
            best_prior: None,
            best_iou: 0.0,
            covered: false,
            bipartite_prior: None,
        };
        gt_count
    ];
    // Sorted by prior then GT: per-prior runs are contiguous.
    pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(p, g, v) in &pairs {
        let m = &mut gts[g];
        if v > m.best_iou {
            m.best_iou = v;
            m.best_prior = Some(p);
        }
    }
    for m in &mut gts {
        m.covered = m.best_iou >= threshold;
    }

    // Phase 1: greedy over pairs by descending IoU, then prior, then GT.
    // A heap suffices since only the first pick of each GT matters.
    let mut heap: BinaryHeap<Candidate> = pairs
        .iter()
        .map(|&(p, g, v)| Candidate {
            iou: v,
            prior: p,
            gt: g,
        })
        .collect();
    let mut prior_bound: HashMap<usize, usize> = HashMap::with_capacity(gt_count);
    let mut gt_done = vec![false; gt_count];
    let mut remaining = gt_count;
    while remaining > 0 {
        let Some(Candidate {
            prior: p, gt: g, ..
        }) = heap.pop()
        else {
            break;
        };
        if gt_done[g] || prior_bound.contains_key(&p) {
            continue;
        }
        gt_done[g] = true;
        remaining -= 1;
        prior_bound.insert(p, g);
        gts[g].bipartite_prior = Some(p);
    }

    // Phase 2 and per-prior summaries.
    let mut priors = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let p = pairs[i].0;
        let mut best_g = pairs[i].1;
        let mut best_v = pairs[i].2;
        let mut j = i + 1;
        while j < pairs.len() && pairs[j].0 == p {
            if pairs[j].2 > best_v {
                best_v = pairs[j].2;
                best_g = pairs[j].1;
            }
            j += 1;
        }
        let matched_gt = match prior_bound.get(&p) {
            Some(&g) => Some(g),
            None if best_v >= threshold => Some(best_g),
            None => None,
        };
        priors.push(PriorMatch {
            prior: p,
            matched_gt,
            iou: best_v,
        });
        i = j;
    }
    MatchResult {
        threshold,
        prior_count,
        priors,
        gts,
    }
}

/// Matches `gts` against `priors`; see the module docs for the rules.
pub fn match_priors(
    priors: &PriorBoxSet,
    gts: &[BoundingBox],
    threshold: f64,
) -> Result<MatchResult> {
    Matcher::new(priors).run(gts, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageBin {
    /// Inclusive lower edge of the width bin in pixels.
    pub width_from: f64,
    /// Exclusive upper edge.
    pub width_to: f64,
    pub covered: u64,
    pub uncovered: u64,
}

/// Covered/uncovered GT counts by box width; accumulates across images.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageHistogram {
    bin_width: f64,
    counts: BTreeMap<u64, (u64, u64)>,
}

impl CoverageHistogram {
    pub fn new(bin_width: f64) -> Result<Self> {
        if !(bin_width >= 1.0 && bin_width.is_finite()) {
            return Err(Error::OutOfRange {
                name: "bin_width",
                value: bin_width,
                range: "[1, inf)",
            });
        }
        Ok(CoverageHistogram {
            bin_width,
            counts: BTreeMap::new(),
        })
    }

    /// Adds one image's GTs, in the order used for matching.
    pub fn add(&mut self, result: &MatchResult, gts: &[BoundingBox]) {
        for (m, gt) in result.gts.iter().zip(gts) {
            self.record(gt.width(), m.covered);
        }
    }

    /// Adds a single GT of the given width.
    pub fn record(&mut self, width: f64, covered: bool) {
        let k = (width / self.bin_width).floor().max(0.0) as u64;
        let e = self.counts.entry(k).or_default();
        if covered {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }

    pub fn merge(&mut self, other: &CoverageHistogram) {
        for (&k, &(c, u)) in &other.counts {
            let e = self.counts.entry(k).or_default();
            e.0 += c;
            e.1 += u;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|(c, u)| c + u).sum()
    }

    /// Dense bins from the smallest to the largest occupied one.
    pub fn bins(&self) -> Vec<CoverageBin> {
        let (Some(&lo), Some(&hi)) = (self.counts.keys().next(), self.counts.keys().last()) else {
            return Vec::new();
        };
        (lo..=hi)
            .map(|k| {
                let (covered, uncovered) = self.counts.get(&k).copied().unwrap_or_default();
                CoverageBin {
                    width_from: k as f64 * self.bin_width,
                    width_to: (k + 1) as f64 * self.bin_width,
                    covered,
                    uncovered,
                }
            })
            .collect()
    }
}

/// Histogram of a single matching result.
pub fn coverage_histogram(
    result: &MatchResult,
    gts: &[BoundingBox],
    bin_width: f64,
) -> Result<CoverageHistogram> {
    let mut h = CoverageHistogram::new(bin_width)?;
    h.add(result, gts);
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{generate, spaced_offsets, PriorLayout};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Exhaustive matcher: full IoU matrix, phase 1 by repeated global argmax.
    fn brute_force(
        priors: &[BoundingBox],
        gts: &[BoundingBox],
        t: f64,
    ) -> (Vec<Option<usize>>, Vec<bool>, Vec<Option<usize>>) {
        let m: Vec<Vec<f64>> = priors
            .iter()
            .map(|p| gts.iter().map(|g| iou(p, g)).collect())
            .collect();
        let mut prior_gt: Vec<Option<usize>> = vec![None; priors.len()];
        let mut gt_taken = vec![false; gts.len()];
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for (p, row) in m.iter().enumerate() {
                if prior_gt[p].is_some() {
                    continue;
                }
                for (g, &v) in row.iter().enumerate() {
                    if gt_taken[g] || v <= 0.0 {
                        continue;
                    }
                    if best.map_or(true, |b| v > b.2) {
                        best = Some((p, g, v));
                    }
                }
            }
            let Some((p, g, _)) = best else { break };
            prior_gt[p] = Some(g);
            gt_taken[g] = true;
        }
        for (p, row) in m.iter().enumerate() {
            if prior_gt[p].is_none() {
                let mut bg = None;
                let mut bv = 0.0;
                for (g, &v) in row.iter().enumerate() {
                    if v > bv {
                        bv = v;
                        bg = Some(g);
                    }
                }
                if bv >= t {
                    prior_gt[p] = bg;
                }
            }
        }
        let covered = (0..gts.len())
            .map(|g| m.iter().any(|row| row[g] >= t))
            .collect();
        let best = (0..gts.len())
            .map(|g| {
                let mut bp = None;
                let mut bv = 0.0;
                for (p, row) in m.iter().enumerate() {
                    if row[g] > bv {
                        bv = row[g];
                        bp = Some(p);
                    }
                }
                bp
            })
            .collect();
        (prior_gt, covered, best)
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n_priors: usize,
        n_gts: usize,
    ) -> (PriorBoxSet, Vec<BoundingBox>) {
        // Snap coordinates to a coarse grid so exact IoU ties occur.
        let bx = |rng: &mut ChaCha8Rng| {
            let x = rng.random_range(0..20) as f64;
            let y = rng.random_range(0..20) as f64;
            let w = rng.random_range(1..8) as f64;
            let h = rng.random_range(1..8) as f64;
            BoundingBox::from_xywh(x, y, w, h).unwrap()
        };
        let boxes: Vec<BoundingBox> = (0..n_priors).map(|_| bx(rng)).collect();
        let gts = (0..n_gts).map(|_| bx(rng)).collect();
        let set = PriorBoxSet {
            origins: vec![
                crate::priors::PriorOrigin {
                    row: 0,
                    col: 0,
                    offset: 0,
                    width: 0,
                    layout: 0
                };
                boxes.len()
            ],
            boxes,
        };
        (set, gts)
    }

    #[test]
    fn identical_prior_is_covered() {
        let gt = BoundingBox::from_xywh(10.0, 10.0, 5.0, 15.0).unwrap();
        let set = PriorBoxSet {
            boxes: vec![gt],
            origins: vec![crate::priors::PriorOrigin {
                row: 0,
                col: 0,
                offset: 0,
                width: 0,
                layout: 0,
            }],
        };
        let r = match_priors(&set, &[gt], 0.3).unwrap();
        assert!(r.gts[0].covered);
        assert_eq!(r.gts[0].best_iou, 1.0);
        assert_eq!(r.prior(0), (Some(0), 1.0));
    }

    #[test]
    fn empty_priors_leave_all_uncovered() {
        let gt = BoundingBox::from_xywh(0.0, 0.0, 5.0, 5.0).unwrap();
        let r = match_priors(&PriorBoxSet::default(), &[gt, gt], 0.3).unwrap();
        assert_eq!(r.covered_count(), 0);
        assert!(r.gts.iter().all(|g| g.best_prior.is_none()));
    }

    #[test]
    fn threshold_range() {
        let set = PriorBoxSet::default();
        assert!(match_priors(&set, &[], 0.0).is_err());
        assert!(match_priors(&set, &[], 1.0).is_err());
    }

    #[test]
    fn five_px_object_between_coarse_priors_is_missed() {
        // Stride 16 is far above the 1.7 px needed for IoU 0.5 on 5 px objects.
        let l = PriorLayout::centered((8, 8), 16.0, vec![5.0], 1.0);
        let set = generate(&l, (128, 128)).unwrap();
        let gt = BoundingBox::from_center(16.0, 16.0, 5.0, 5.0).unwrap();
        let r = match_priors(&set, &[gt], 0.5).unwrap();
        assert!(!r.gts[0].covered);
        assert_eq!(r.gts[0].best_iou, 0.0);
    }

    #[test]
    fn dense_priors_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = PriorLayout {
            offsets_x: spaced_offsets(0.16).unwrap(),
            offsets_y: vec![0.24, 0.72],
            ..PriorLayout::centered((8, 16), 16.0, vec![4.0, 8.0, 16.0], 3.0)
        };
        let set = generate(&l, (128, 256)).unwrap();
        let gts: Vec<BoundingBox> = (0..100)
            .map(|_| {
                let w = rng.random_range(2.0..20.0);
                BoundingBox::from_center(
                    rng.random_range(0.0..256.0),
                    rng.random_range(0.0..128.0),
                    w,
                    3.0 * w,
                )
                .unwrap()
            })
            .collect();
        let r = match_priors(&set, &gts, 0.3).unwrap();
        let (prior_gt, covered, best) = brute_force(&set.boxes, &gts, 0.3);
        assert_eq!(r.gts.iter().map(|g| g.covered).collect::<Vec<_>>(), covered);
        assert_eq!(r.gts.iter().map(|g| g.best_prior).collect::<Vec<_>>(), best);
        let ours: Vec<Option<usize>> = (0..set.len()).map(|p| r.prior(p).0).collect();
        assert_eq!(ours, prior_gt);
    }

    #[test]
    fn histogram_counts() {
        let gts = vec![
            BoundingBox::from_xywh(0.0, 0.0, 3.5, 10.0).unwrap(),
            BoundingBox::from_xywh(50.0, 0.0, 5.0, 10.0).unwrap(),
        ];
        let set = PriorBoxSet {
            boxes: vec![gts[0]],
            origins: vec![crate::priors::PriorOrigin {
                row: 0,
                col: 0,
                offset: 0,
                width: 0,
                layout: 0,
            }],
        };
        let r = match_priors(&set, &gts, 0.3).unwrap();
        let h = coverage_histogram(&r, &gts, 1.0).unwrap();
        let bins = h.bins();
        assert_eq!(bins.len(), 3);
        assert_eq!(
            (bins[0].width_from, bins[0].covered, bins[0].uncovered),
            (3.0, 1, 0)
        );
        assert_eq!((bins[1].covered, bins[1].uncovered), (0, 0));
        assert_eq!(
            (bins[2].width_from, bins[2].covered, bins[2].uncovered),
            (5.0, 0, 1)
        );
        assert_eq!(h.total(), 2);
        assert!(CoverageHistogram::new(0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn small_instances_match_enumeration(seed in any::<u64>(), np in 0usize..=50, ng in 0usize..=10, t in 0.05..0.95f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (set, gts) = random_instance(&mut rng, np, ng);
            let r = match_priors(&set, &gts, t).unwrap();
            let (prior_gt, covered, best) = brute_force(&set.boxes, &gts, t);
            prop_assert_eq!(r.gts.iter().map(|g| g.covered).collect::<Vec<_>>(), covered);
            prop_assert_eq!(r.gts.iter().map(|g| g.best_prior).collect::<Vec<_>>(), best);
            let ours: Vec<Option<usize>> = (0..set.len()).map(|p| r.prior(p).0).collect();
            prop_assert_eq!(ours, prior_gt);
            // Every GT with an overlapping prior has a best prior.
            for (g, m) in r.gts.iter().enumerate() {
                let overlapping = set.boxes.iter().any(|p| iou(p, &gts[g]) > 0.0);
                prop_assert_eq!(m.best_prior.is_some(), overlapping);
            }
            // A prior serves at most one GT by construction; phase-1 binds are distinct.
            let mut bound: Vec<usize> = r.gts.iter().filter_map(|g| g.bipartite_prior).collect();
            let n = bound.len();
            bound.sort_unstable();
            bound.dedup();
            prop_assert_eq!(bound.len(), n);
            // Determinism.
            prop_assert_eq!(&r, &match_priors(&set, &gts, t).unwrap());
        }

        #[test]
        fn best_overlap_agrees_with_full_run(seed in any::<u64>(), np in 0usize..=80, ng in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (set, gts) = random_instance(&mut rng, np, ng);
            let m = Matcher::new(&set);
            let r = m.run(&gts, 0.5).unwrap();
            for (g, gt) in gts.iter().enumerate() {
                let (p, v) = m.best_overlap(gt);
                prop_assert_eq!(p, r.gts[g].best_prior);
                prop_assert_eq!(v, r.gts[g].best_iou);
            }
        }

        #[test]
        fn lowering_threshold_never_uncovers(seed in any::<u64>(), t1 in 0.05..0.95f64, t2 in 0.05..0.95f64) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (set, gts) = random_instance(&mut rng, 40, 8);
            let a = match_priors(&set, &gts, hi).unwrap();
            let b = match_priors(&set, &gts, lo).unwrap();
            for (x, y) in a.gts.iter().zip(&b.gts) {
                prop_assert!(!x.covered || y.covered);
            }
        }

        #[test]
        fn extra_offsets_never_lower_best_iou(seed in any::<u64>(), extra in prop::collection::vec(0.0..=1.0f64, 1..4)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = PriorLayout::centered((4, 8), 16.0, vec![4.0, 9.0], 3.0);
            let mut more = base.clone();
            more.offsets_x.extend(extra.iter().copied());
            more.offsets_y.extend(extra.iter().copied());
            let gts: Vec<BoundingBox> = (0..10)
                .map(|_| {
                    let w = rng.random_range(2.0..12.0);
                    BoundingBox::from_center(rng.random_range(0.0..128.0), rng.random_range(0.0..64.0), w, 3.0 * w).unwrap()
                })
                .collect();
            let a = match_priors(&generate(&base, (64, 128)).unwrap(), &gts, 0.3).unwrap();
            let b = match_priors(&generate(&more, (64, 128)).unwrap(), &gts, 0.3).unwrap();
            for (x, y) in a.gts.iter().zip(&b.gts) {
                prop_assert!(y.best_iou >= x.best_iou);
            }
        }
    }
}
