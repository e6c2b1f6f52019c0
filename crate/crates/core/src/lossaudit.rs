//! Numerical evaluation of the detector training objective.
//!
//! For `N` matched priors the objective is
//! `(L_conf + alpha * L_loc + beta * L_state) / N`, and 0 when `N = 0`.
//!
//! * `L_conf`: two-way softmax cross-entropy (background vs. object) over the
//!   matched priors plus the selected negatives.
//! * `L_loc`: smooth-L1 between predicted and encoded offsets, matched only.
//! * `L_state`: per-class sigmoid cross-entropy of the four state logits
//!   against the one-hot GT state, matched only.
//!
//! Nothing here trains anything; the values exist for auditing predictions
//! and as oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::matching::MatchResult;
use crate::priors::PriorBoxSet;
use crate::records::State;

/// Offset scaling for center and size terms of the box encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variances {
    pub center: f64,
    pub size: f64,
}

impl Default for Variances {
    fn default() -> Self {
        Variances {
            center: 0.1,
            size: 0.2,
        }
    }
}

/// Encodes `gt` relative to `prior` as `(dcx, dcy, dw, dh)`.
pub fn encode_offsets(prior: &BoundingBox, gt: &BoundingBox, var: Variances) -> Result<[f64; 4]> {
    let (pw, ph) = (prior.width(), prior.height());
    if !(pw > 0.0 && ph > 0.0) {
        return Err(Error::InvalidBox(format!("prior {prior:?} has zero area")));
    }
    let (gw, gh) = (gt.width(), gt.height());
    if !(gw > 0.0 && gh > 0.0) {
        return Err(Error::InvalidBox(format!(
            "ground truth {gt:?} needs positive width and height"
        )));
    }
    let (pcx, pcy) = prior.center();
    let (gcx, gcy) = gt.center();
    Ok([
        (gcx - pcx) / pw / var.center,
        (gcy - pcy) / ph / var.center,
        (gw / pw).ln() / var.size,
        (gh / ph).ln() / var.size,
    ])
}

/// Inverse of [`encode_offsets`].
pub fn decode_offsets(
    prior: &BoundingBox,
    offsets: &[f64; 4],
    var: Variances,
) -> Result<BoundingBox> {
    let (pw, ph) = (prior.width(), prior.height());
    if !(pw > 0.0 && ph > 0.0) {
        return Err(Error::InvalidBox(format!("prior {prior:?} has zero area")));
    }
    let (pcx, pcy) = prior.center();
    let cx = pcx + offsets[0] * var.center * pw;
    let cy = pcy + offsets[1] * var.center * ph;
    let w = pw * (offsets[2] * var.size).exp();
    let h = ph * (offsets[3] * var.size).exp();
    BoundingBox::from_center(cx, cy, w, h)
}

/// Raw outputs for one prior: binary confidence, box offsets, state logits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionRow {
    /// Background and object logits.
    pub conf: [f64; 2],
    pub loc: [f64; 4],
    /// Off, red, yellow, green logits.
    pub state: [f64; 4],
}

impl PredictionRow {
    pub fn foreground_probability(&self) -> f64 {
        let [b, f] = self.conf;
        1.0 / (1.0 + (b - f).exp())
    }
}

/// Outputs of the single five-way classifier (background plus four states).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MulticlassRow {
    /// Background, off, red, yellow, green logits.
    pub logits: [f64; 5],
    pub loc: [f64; 4],
}

impl MulticlassRow {
    pub fn foreground_probability(&self) -> f64 {
        1.0 - softmax(&self.logits)[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NegativesPolicy {
    /// Every unmatched prior is a negative.
    All,
    /// The `ratio * N` unmatched priors with the largest background loss.
    HardNegative { ratio: f64 },
}

impl Default for NegativesPolicy {
    fn default() -> Self {
        NegativesPolicy::HardNegative { ratio: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub negatives: NegativesPolicy,
    pub variances: Variances,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            beta: 1.0,
            negatives: NegativesPolicy::default(),
            variances: Variances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub conf: f64,
    pub loc: f64,
    pub state: f64,
    /// Matched prior count `N`.
    pub matched: usize,
    pub negatives: usize,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Sums per-image breakdowns; `total` is re-normalized by the summed `N`.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.conf += other.conf;
        self.loc += other.loc;
        self.state += other.state;
        self.matched += other.matched;
        self.negatives += other.negatives;
        self.alpha = other.alpha;
        self.beta = other.beta;
        self.total = normalized_total(
            self.conf,
            self.loc,
            self.state,
            self.matched,
            self.alpha,
            self.beta,
        );
    }
}

fn normalized_total(conf: f64, loc: f64, state: f64, n: usize, alpha: f64, beta: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        (conf + alpha * loc + beta * state) / n as f64
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax<const K: usize>(v: &[f64; K]) -> [f64; K] {
    let lse = log_sum_exp(v);
    v.map(|x| (x - lse).exp())
}

fn smooth_l1(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        0.5 * d * d
    } else {
        a - 0.5
    }
}

fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// `-ln sigmoid(s)` if `target`, else `-ln(1 - sigmoid(s))`, computed stably.
fn sigmoid_ce(s: f64, target: bool) -> f64 {
    let y = if target { 1.0 } else { 0.0 };
    s.max(0.0) - y * s + (-s.abs()).exp().ln_1p()
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

struct Selection {
    /// `(prior, gt)` pairs.
    positives: Vec<(usize, usize)>,
    negatives: Vec<usize>,
}

fn select(
    prior_count: usize,
    m: &MatchResult,
    policy: NegativesPolicy,
    neg_loss: impl Fn(usize) -> f64,
) -> Result<Selection> {
    let positives: Vec<(usize, usize)> = m.matched_pairs().collect();
    let mut is_pos = vec![false; prior_count];
    for &(p, _) in &positives {
        is_pos[p] = true;
    }
    let candidates = (0..prior_count).filter(|&p| !is_pos[p]);
    let negatives = match policy {
        NegativesPolicy::All => candidates.collect(),
        NegativesPolicy::HardNegative { ratio } => {
            if !(ratio >= 0.0 && ratio.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "negative ratio {ratio} must be non-negative"
                )));
            }
            let want = (ratio * positives.len() as f64).floor() as usize;
            let mut scored: Vec<(usize, f64)> = candidates.map(|p| (p, neg_loss(p))).collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.truncate(want);
            let mut v: Vec<usize> = scored.into_iter().map(|(p, _)| p).collect();
            v.sort_unstable();
            v
        }
    };
    Ok(Selection {
        positives,
        negatives,
    })
}

fn check_inputs(
    priors: &PriorBoxSet,
    m: &MatchResult,
    rows: usize,
    gts: &[BoundingBox],
    states: &[State],
) -> Result<()> {
    if rows != priors.len() {
        return Err(Error::RowCountMismatch {
            rows,
            priors: priors.len(),
        });
    }
    if m.prior_count != priors.len() || m.gts.len() != gts.len() {
        return Err(Error::InvalidParameter(
            "match result does not belong to these priors and ground truths".into(),
        ));
    }
    if states.len() != gts.len() {
        return Err(Error::InvalidParameter(format!(
            "{} states given for {} ground truths",
            states.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// Evaluates the binary-confidence + sigmoid-state objective.
pub fn evaluate_loss(
    priors: &PriorBoxSet,
    m: &MatchResult,
    rows: &[PredictionRow],
    gts: &[BoundingBox],
    states: &[State],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    check_inputs(priors, m, rows.len(), gts, states)?;
    let sel = select(priors.len(), m, cfg.negatives, |p| {
        log_sum_exp(&rows[p].conf) - rows[p].conf[0]
    })?;
    let mut conf = 0.0;
    let mut loc = 0.0;
    let mut state = 0.0;
    for &(p, g) in &sel.positives {
        let row = &rows[p];
        conf += log_sum_exp(&row.conf) - row.conf[1];
        let target = encode_offsets(&priors.boxes[p], &gts[g], cfg.variances)?;
        loc += (0..4)
            .map(|k| smooth_l1(row.loc[k] - target[k]))
            .sum::<f64>();
        let gt_state = states[g].index();
        state += (0..4)
            .map(|k| sigmoid_ce(row.state[k], k == gt_state))
            .sum::<f64>();
    }
    for &p in &sel.negatives {
        conf += log_sum_exp(&rows[p].conf) - rows[p].conf[0];
    }
    let n = sel.positives.len();
    Ok(LossBreakdown {
        conf,
        loc,
        state,
        matched: n,
        negatives: sel.negatives.len(),
        alpha: cfg.alpha,
        beta: cfg.beta,
        total: normalized_total(conf, loc, state, n, cfg.alpha, cfg.beta),
    })
}

/// Gradient of `total` with respect to every entry of every row, holding the
/// negative selection fixed.
pub fn loss_gradients(
    priors: &PriorBoxSet,
    m: &MatchResult,
    rows: &[PredictionRow],
    gts: &[BoundingBox],
    states: &[State],
    cfg: &LossConfig,
) -> Result<Vec<PredictionRow>> {
    check_inputs(priors, m, rows.len(), gts, states)?;
    let sel = select(priors.len(), m, cfg.negatives, |p| {
        log_sum_exp(&rows[p].conf) - rows[p].conf[0]
    })?;
    let mut grads = vec![PredictionRow::default(); rows.len()];
    let n = sel.positives.len();
    if n == 0 {
        return Ok(grads);
    }
    let scale = 1.0 / n as f64;
    for &(p, g) in &sel.positives {
        let row = &rows[p];
        let pr = softmax(&row.conf);
        grads[p].conf = [pr[0] * scale, (pr[1] - 1.0) * scale];
        let target = encode_offsets(&priors.boxes[p], &gts[g], cfg.variances)?;
        for k in 0..4 {
            grads[p].loc[k] = cfg.alpha * scale * smooth_l1_grad(row.loc[k] - target[k]);
            let y = if k == states[g].index() { 1.0 } else { 0.0 };
            grads[p].state[k] = cfg.beta * scale * (sigmoid(row.state[k]) - y);
        }
    }
    for &p in &sel.negatives {
        let pr = softmax(&rows[p].conf);
        grads[p].conf = [(pr[0] - 1.0) * scale, pr[1] * scale];
    }
    Ok(grads)
}

/// Evaluates the five-way softmax formulation, where state is folded into the
/// class label. `state` in the result is always 0.
pub fn evaluate_multiclass_loss(
    priors: &PriorBoxSet,
    m: &MatchResult,
    rows: &[MulticlassRow],
    gts: &[BoundingBox],
    states: &[State],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    check_inputs(priors, m, rows.len(), gts, states)?;
    let sel = select(priors.len(), m, cfg.negatives, |p| {
        log_sum_exp(&rows[p].logits) - rows[p].logits[0]
    })?;
    let mut conf = 0.0;
    let mut loc = 0.0;
    for &(p, g) in &sel.positives {
        let row = &rows[p];
        conf += log_sum_exp(&row.logits) - row.logits[1 + states[g].index()];
        let target = encode_offsets(&priors.boxes[p], &gts[g], cfg.variances)?;
        loc += (0..4)
            .map(|k| smooth_l1(row.loc[k] - target[k]))
            .sum::<f64>();
    }
    for &p in &sel.negatives {
        conf += log_sum_exp(&rows[p].logits) - rows[p].logits[0];
    }
    let n = sel.positives.len();
    Ok(LossBreakdown {
        conf,
        loc,
        state: 0.0,
        matched: n,
        negatives: sel.negatives.len(),
        alpha: cfg.alpha,
        beta: cfg.beta,
        total: normalized_total(conf, loc, 0.0, n, cfg.alpha, 0.0),
    })
}
