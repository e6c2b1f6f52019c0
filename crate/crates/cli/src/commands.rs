use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use anchorscope::evalkit::{ConfidenceGrid, DcRule, EvalConfig, Evaluator};
use anchorscope::geometry::max_allowed_stride;
use anchorscope::jsonl::{stream_records, write_jsonl, OnError, RecordStream};
use anchorscope::lossaudit::{
    evaluate_loss, LossBreakdown, LossConfig, NegativesPolicy, PredictionRow, Variances,
};
use anchorscope::matching::{CoverageHistogram, Matcher};
use anchorscope::netgraph::{analyze, inception_v3, load_netconfig, NetAnalysis, NetGraph};
use anchorscope::nms::{suppress, Detection};
use anchorscope::priors::{
    effective_stride, generate_all, load_priorconfig, offsets_for_target, resolve_all, PriorBoxSet,
    PriorLayout,
};
use anchorscope::records::{
    GroundTruthRecord, Id, PredictionRowRecord, RawDetectionRecord, Record, State,
};
use anchorscope::synth::{generate, random_boxes, SynthConfig, WidthDistribution};
use anchorscope::BoundingBox;
use serde::Serialize;

use crate::cli::*;
use crate::error::{CliError, CliResult};
use crate::output::{create, csv_report, sink, write_csv, write_json, Run};

const BUILTIN_PREFIX: &str = "builtin:";

pub struct Ctx {
    pub on_error: OnError,
}

impl Ctx {
    fn stream<T: Record>(&self, path: &Path) -> CliResult<RecordStream<std::fs::File, T>> {
        stream_records(path, self.on_error).map_err(|e| CliError::in_file(path.display(), e))
    }

    /// Drains a stream through `f`, attributing errors to `path`.
    fn each<T: Record>(&self, path: &Path, mut f: impl FnMut(T) -> CliResult<()>) -> CliResult<()> {
        let mut s = self.stream::<T>(path)?;
        for rec in s.by_ref() {
            f(rec.map_err(|e| CliError::in_file(path.display(), e))?)?;
        }
        if s.skipped_count() > 0 {
            log::warn!(
                "{}: skipped {} malformed line(s)",
                path.display(),
                s.skipped_count()
            );
            for d in s.diagnostics() {
                log::info!("{}: {d}", path.display());
            }
        }
        Ok(())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_net(spec: &str, run: &mut Run) -> CliResult<NetGraph> {
    if let Some(name) = spec.strip_prefix(BUILTIN_PREFIX) {
        return match name {
            "inception_v3" => Ok(inception_v3()),
            _ => Err(usage(format!("unknown built-in network '{name}'"))),
        };
    }
    let text = std::fs::read_to_string(spec).map_err(|e| CliError::in_file(spec, e.into()))?;
    run.input(spec);
    load_netconfig(&text).map_err(|e| CliError::in_file(spec, e))
}

fn load_layouts(
    files: &[PathBuf],
    analysis: &NetAnalysis,
    run: &mut Run,
) -> CliResult<(Vec<PriorLayout>, Vec<String>)> {
    let mut layouts = Vec::new();
    let mut names = Vec::new();
    for f in files {
        let text =
            std::fs::read_to_string(f).map_err(|e| CliError::in_file(f.display(), e.into()))?;
        run.input(f);
        let specs = load_priorconfig(&text).map_err(|e| CliError::in_file(f.display(), e))?;
        layouts
            .extend(resolve_all(&specs, analysis).map_err(|e| CliError::in_file(f.display(), e))?);
        names.extend(specs.into_iter().map(|s| s.layer_name));
    }
    Ok((layouts, names))
}

fn prior_set(
    files: &[PathBuf],
    net: &NetArgs,
    run: &mut Run,
) -> CliResult<(Vec<PriorLayout>, Vec<String>, PriorBoxSet)> {
    let graph = load_net(&net.net, run)?;
    let analysis = analyze(&graph, net.input)?;
    let (layouts, names) = load_layouts(files, &analysis, run)?;
    let set = generate_all(&layouts, net.input)?;
    Ok((layouts, names, set))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RfRow<'a> {
    layer: &'a str,
    height: u32,
    width: u32,
    stride: u32,
    rf_min: u32,
    rf_max: u32,
}

pub fn rf(args: &RfArgs) -> CliResult<()> {
    let mut run = Run::new("rf", args);
    let graph = load_net(&args.netcfg, &mut run)?;
    let a = analyze(&graph, args.input)?;
    let rows: Vec<RfRow> = a
        .nodes
        .iter()
        .filter(|n| args.all || n.table)
        .map(|n| RfRow {
            layer: &n.name,
            height: n.feature_height,
            width: n.feature_width,
            stride: n.cumulative_stride,
            rf_min: n.rf_min,
            rf_max: n.rf_max,
        })
        .collect();
    let mut out = sink(args.out.as_deref())?;
    match args.format {
        Format::Csv => write_csv(&mut out, &rows)?,
        Format::Json => write_json(
            &mut out,
            &serde_json::json!({ "input": [args.input.0, args.input.1], "layers": rows }),
        )?,
        Format::Text => {
            let name_w = rows.iter().map(|r| r.layer.len()).max().unwrap_or(5).max(5);
            writeln!(
                out,
                "{:<name_w$}  {:>6}  {:>6}  {:>6}  receptive field (min / max)",
                "layer", "height", "width", "stride"
            )?;
            for r in &rows {
                let rf = if r.rf_min == r.rf_max {
                    format!("{0}x{0}", r.rf_min)
                } else {
                    format!("{0}x{0} / {1}x{1}", r.rf_min, r.rf_max)
                };
                writeln!(
                    out,
                    "{:<name_w$}  {:>6}  {:>6}  {:>6}  {rf}",
                    r.layer, r.height, r.width, r.stride
                )?;
            }
            out.flush()?;
        }
    }
    drop(out);
    if let Some(p) = &args.out {
        run.manifest_for(p)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct LayoutSummary {
    layer: String,
    feature_height: u32,
    feature_width: u32,
    stride: f64,
    priors_per_cell: usize,
    priors: usize,
    effective_stride_x: f64,
    effective_stride_y: f64,
}

#[derive(Serialize)]
struct BoxRow {
    index: usize,
    layout: u32,
    row: u32,
    col: u32,
    offset: u32,
    width_index: u32,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

pub fn priors(args: &PriorsArgs) -> CliResult<()> {
    let mut run = Run::new("priors", args);
    let (layouts, names, set) = prior_set(&args.priorcfg, &args.net, &mut run)?;
    let summary = layouts
        .iter()
        .zip(names)
        .map(|(l, layer)| {
            let (ex, ey) = effective_stride(l)?;
            Ok(LayoutSummary {
                layer,
                feature_height: l.feature_size.0,
                feature_width: l.feature_size.1,
                stride: l.cumulative_stride,
                priors_per_cell: l.priors_per_cell(),
                priors: l.prior_count(),
                effective_stride_x: ex,
                effective_stride_y: ey,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(p) = &args.emit {
        let rows = set
            .boxes
            .iter()
            .zip(&set.origins)
            .enumerate()
            .map(|(i, (b, o))| BoxRow {
                index: i,
                layout: o.layout,
                row: o.row,
                col: o.col,
                offset: o.offset,
                width_index: o.width,
                x_min: b.x_min,
                y_min: b.y_min,
                x_max: b.x_max,
                y_max: b.y_max,
            });
        csv_report(&run, p, rows)?;
    }
    let mut out = sink(None)?;
    match args.format {
        Format::Json => write_json(
            &mut out,
            &serde_json::json!({ "layouts": summary, "total_priors": set.len() }),
        )?,
        Format::Csv => write_csv(&mut out, &summary)?,
        Format::Text => {
            for s in &summary {
                writeln!(
                    out,
                    "{}: {}x{} cells, stride {}, {} priors per cell, {} priors, effective stride {:.3} x {:.3} px",
                    s.layer,
                    s.feature_height,
                    s.feature_width,
                    s.stride,
                    s.priors_per_cell,
                    s.priors,
                    s.effective_stride_x,
                    s.effective_stride_y
                )?;
            }
            writeln!(out, "total: {} priors", set.len())?;
            out.flush()?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct StrideCheck {
    stride: f64,
    ok: bool,
    offsets_x: Vec<f64>,
    offsets_y: Vec<f64>,
}

pub fn stride_advice(args: &StrideAdviceArgs) -> CliResult<()> {
    let advice = max_allowed_stride(args.iou, args.width)?;
    let check = match args.stride {
        Some(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(usage(format!("--stride {s} must be positive")));
            }
            let (ox, oy) = offsets_for_target(s, args.aspect_ratio, args.iou, args.width)?;
            Some(StrideCheck {
                stride: s,
                ok: s <= advice.max_stride_px,
                offsets_x: ox,
                offsets_y: oy,
            })
        }
        None => None,
    };
    let mut out = sink(None)?;
    match args.format {
        Format::Json => write_json(
            &mut out,
            &serde_json::json!({ "advice": advice, "check": check }),
        )?,
        Format::Csv => write_csv(&mut out, [advice])?,
        Format::Text => {
            writeln!(out, "target IoU:        {}", advice.target_iou)?;
            writeln!(
                out,
                "positioning error: {:.4} of the object width",
                advice.epsilon
            )?;
            writeln!(
                out,
                "max step (delta):  {:.4} of the object width",
                advice.max_stride_fraction
            )?;
            writeln!(
                out,
                "max stride:        {:.3} px for objects {} px wide",
                advice.max_stride_px, advice.object_width
            )?;
            if let Some(c) = &check {
                let verdict = if c.ok { "within" } else { "exceeds" };
                writeln!(out, "stride {} px {verdict} the bound", c.stride)?;
                if !c.ok {
                    let fmt = |v: &[f64]| {
                        v.iter()
                            .map(|o| format!("{o:.4}"))
                            .collect::<Vec<_>>()
                            .join(", ")
                    };
                    writeln!(out, "suggested offsets_x: [{}]", fmt(&c.offsets_x))?;
                    writeln!(out, "suggested offsets_y: [{}]", fmt(&c.offsets_y))?;
                }
            }
            out.flush()?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CoverageRow {
    width_from: f64,
    width_to: f64,
    covered: u64,
    uncovered: u64,
    rate: Option<f64>,
}

/// Labeled boxes grouped by image, in order of first appearance.
fn boxes_by_image(
    ctx: &Ctx,
    path: &Path,
) -> CliResult<Vec<(Id, Vec<(BoundingBox, Option<State>)>)>> {
    let mut index: HashMap<Id, usize> = HashMap::new();
    let mut images: Vec<(Id, Vec<(BoundingBox, Option<State>)>)> = Vec::new();
    ctx.each::<GroundTruthRecord>(path, |r| {
        let i = *index.entry(r.image_id.clone()).or_insert_with(|| {
            images.push((r.image_id.clone(), Vec::new()));
            images.len() - 1
        });
        if let Some(b) = r.bbox() {
            images[i].1.push((b, r.state));
        }
        Ok(())
    })?;
    Ok(images)
}

pub fn coverage(ctx: &Ctx, args: &CoverageArgs) -> CliResult<()> {
    let mut run = Run::new("coverage", args);
    let (_, _, set) = prior_set(&args.priorcfg, &args.net, &mut run)?;
    let matcher = Matcher::new(&set);
    let mut hist = CoverageHistogram::new(args.bin_width)?;
    // Coverage of a GT depends only on its best prior, not on the other
    // objects in its image.
    let mut add = |gt: &BoundingBox| {
        let (_, best) = matcher.best_overlap(gt);
        hist.record(gt.width(), best >= args.iou);
    };
    match (&args.labels, args.synthetic) {
        (Some(path), _) => {
            run.input(path);
            ctx.each::<GroundTruthRecord>(path, |r| {
                if let Some(b) = r.bbox() {
                    add(&b);
                }
                Ok(())
            })?;
        }
        (None, Some(n)) => {
            let widths: WidthDistribution = args.widths.parse()?;
            for g in random_boxes(args.seed, n, widths, args.aspect_ratio, args.net.input)? {
                add(&g);
            }
        }
        (None, None) => return Err(usage("either --labels or --synthetic is required")),
    }
    let rows: Vec<CoverageRow> = hist
        .bins()
        .into_iter()
        .map(|b| CoverageRow {
            width_from: b.width_from,
            width_to: b.width_to,
            covered: b.covered,
            uncovered: b.uncovered,
            rate: (b.covered + b.uncovered > 0)
                .then(|| b.covered as f64 / (b.covered + b.uncovered) as f64),
        })
        .collect();
    let covered: u64 = rows.iter().map(|r| r.covered).sum();
    let total = hist.total();
    let share = if total == 0 {
        0.0
    } else {
        covered as f64 / total as f64
    };
    let mut out = sink(args.out.as_deref())?;
    match args.format {
        Format::Csv => write_csv(&mut out, &rows)?,
        Format::Json => write_json(
            &mut out,
            &serde_json::json!({
                "priors": set.len(),
                "iou_threshold": args.iou,
                "ground_truths": total,
                "covered": covered,
                "covered_share": share,
                "bins": rows,
            }),
        )?,
        Format::Text => {
            writeln!(
                out,
                "{:>12}  {:>8}  {:>9}  {:>6}",
                "width [px]", "covered", "uncovered", "rate"
            )?;
            for r in &rows {
                let rate = r
                    .rate
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".into());
                writeln!(
                    out,
                    "{:>12}  {:>8}  {:>9}  {:>6}",
                    format!("{}-{}", r.width_from, r.width_to),
                    r.covered,
                    r.uncovered,
                    rate
                )?;
            }
            writeln!(
                out,
                "{covered} of {total} ground truths covered ({:.1}%) by {} priors at IoU {}",
                100.0 * share,
                set.len(),
                args.iou
            )?;
            out.flush()?;
        }
    }
    drop(out);
    if let Some(p) = &args.out {
        run.manifest_for(p)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn parse_negatives(s: &str) -> CliResult<NegativesPolicy> {
    if s == "all" {
        return Ok(NegativesPolicy::All);
    }
    let ratio = s
        .strip_prefix("hard:")
        .and_then(|r| r.parse::<f64>().ok())
        .filter(|r| *r >= 0.0 && r.is_finite())
        .ok_or_else(|| {
            usage(format!(
                "--negatives expects 'all' or 'hard:RATIO', got '{s}'"
            ))
        })?;
    Ok(NegativesPolicy::HardNegative { ratio })
}

#[derive(Serialize)]
struct LossReport {
    images: usize,
    images_without_rows: usize,
    loss: LossBreakdown,
}

pub fn loss(ctx: &Ctx, args: &LossArgs) -> CliResult<()> {
    let mut run = Run::new("loss", args);
    let n = args.files.len();
    let (cfg_files, labels, preds) = (&args.files[..n - 2], &args.files[n - 2], &args.files[n - 1]);
    let cfg = LossConfig {
        alpha: args.alpha,
        beta: args.beta,
        negatives: parse_negatives(&args.negatives)?,
        variances: Variances {
            center: args.variance_center,
            size: args.variance_size,
        },
    };
    let (_, _, set) = prior_set(cfg_files, &args.net, &mut run)?;
    let matcher = Matcher::new(&set);
    let images = boxes_by_image(ctx, labels)?;
    let index: HashMap<&Id, usize> = images
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id, i))
        .collect();

    let mut total = LossBreakdown {
        alpha: cfg.alpha,
        beta: cfg.beta,
        ..LossBreakdown::default()
    };
    let mut seen: HashSet<usize> = HashSet::new();
    let mut current: Option<usize> = None;
    let mut rows: Vec<PredictionRow> = Vec::with_capacity(set.len());
    let mut flush = |img: usize, rows: &mut Vec<PredictionRow>| -> CliResult<()> {
        let objs = &images[img].1;
        let gts: Vec<BoundingBox> = objs.iter().map(|(b, _)| *b).collect();
        let states: Vec<State> = objs
            .iter()
            .map(|(_, s)| s.ok_or_else(|| usage("labeled object without state")))
            .collect::<CliResult<_>>()?;
        let m = matcher.run(&gts, args.iou)?;
        let l = evaluate_loss(&set, &m, rows, &gts, &states, &cfg)
            .map_err(|e| CliError::in_file(format!("image '{}'", images[img].0), e))?;
        total.accumulate(&l);
        rows.clear();
        Ok(())
    };
    ctx.each::<PredictionRowRecord>(preds, |r| {
        let img = *index
            .get(&r.image_id)
            .ok_or_else(|| anchorscope::Error::UnknownImage(r.image_id.to_string()))?;
        if current != Some(img) {
            if let Some(prev) = current {
                flush(prev, &mut rows)?;
            }
            if !seen.insert(img) {
                return Err(usage(format!(
                    "rows of image '{}' are not contiguous",
                    r.image_id
                )));
            }
            current = Some(img);
        }
        rows.push(PredictionRow {
            conf: r.conf,
            loc: r.loc,
            state: r.state,
        });
        Ok(())
    })?;
    if let Some(prev) = current {
        flush(prev, &mut rows)?;
    }
    run.input(labels);
    run.input(preds);
    let report = LossReport {
        images: seen.len(),
        images_without_rows: images.len() - seen.len(),
        loss: total,
    };
    write_json(sink(None)?, &report)
}

// ---------------------------------------------------------------------------

pub fn nms(ctx: &Ctx, args: &NmsArgs) -> CliResult<()> {
    let mut run = Run::new("nms", args);
    run.input(&args.raw_dets);
    let mut index: HashMap<Id, usize> = HashMap::new();
    let mut groups: Vec<Vec<Detection>> = Vec::new();
    ctx.each::<RawDetectionRecord>(&args.raw_dets, |r| {
        let i = *index.entry(r.image_id.clone()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[i].push(Detection::from(r));
        Ok(())
    })?;
    let mut out = sink(args.emit.as_deref())?;
    let (mut n_in, mut n_out) = (0, 0);
    for g in &groups {
        let kept = suppress(g, args.iou)?;
        n_in += g.len();
        n_out += kept.len();
        write_jsonl(&mut out, kept.iter().map(|f| f.to_record()))?;
    }
    out.flush()?;
    drop(out);
    log::info!(
        "nms: {n_in} detections in {} images -> {n_out}",
        groups.len()
    );
    if let Some(p) = &args.emit {
        run.manifest_for(p)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn state_of(s: StateArg) -> State {
    match s {
        StateArg::Off => State::Off,
        StateArg::Red => State::Red,
        StateArg::Yellow => State::Yellow,
        StateArg::Green => State::Green,
    }
}

#[derive(Serialize)]
struct TrackRow<'a> {
    track: &'a str,
    occurrences: u64,
    detected: u64,
    p_track: f64,
}

pub fn eval(ctx: &Ctx, args: &EvalArgs) -> CliResult<()> {
    let mut run = Run::new("eval", args);
    run.input(&args.labels);
    run.input(&args.dets);
    let cfg = EvalConfig {
        iou_threshold: args.iou,
        min_width: args.min_width,
        dc_rule: match args.dc_rule {
            DcRuleArg::Default => DcRule::default(),
            DcRuleArg::None => DcRule::None,
        },
        state_filter: args.state.map(state_of),
        require_state_match: args.require_state_match,
    };
    let grid = ConfidenceGrid::new(args.grid)?;
    let mut ev = Evaluator::new(cfg)?;
    ctx.each::<GroundTruthRecord>(&args.labels, |r| Ok(ev.add_label(&r)?))?;
    ctx.each::<anchorscope::records::DetectionRecord>(&args.dets, |r| {
        ev.add_detection(&r)
            .map_err(|e| CliError::in_file(args.dets.display(), e))
    })?;
    let report = ev.finish(grid);
    let op_index = report.roc.operating_point(args.fppi);
    let op = op_index.map(|i| report.roc.points[i]);
    let threshold = op.map(|p| p.threshold).unwrap_or(1.0);
    let tracks = report.track_recall(threshold);

    if let Some(p) = &args.emit_roc {
        csv_report(&run, p, &report.roc.points)?;
    }
    if let Some(p) = &args.emit_width {
        csv_report(&run, p, report.recall_by_width(threshold, args.bin_width)?)?;
    }
    if let Some(p) = &args.emit_track {
        let rows = tracks.tracks.iter().map(|t| TrackRow {
            track: &t.track,
            occurrences: t.occurrences,
            detected: t.detected,
            p_track: t.p_track,
        });
        csv_report(&run, p, rows)?;
    }

    let lamr = if args.lamr { report.lamr() } else { None };
    let mut out = sink(None)?;
    match args.format {
        Format::Json | Format::Csv => write_json(
            &mut out,
            &serde_json::json!({
                "summary": report.summary,
                "lamr": lamr,
                "operating_point": op.map(|p| serde_json::json!({
                    "fppi_target": args.fppi,
                    "threshold": p.threshold,
                    "fppi": p.fppi,
                    "miss_rate": p.miss_rate,
                })),
                "tracks": {
                    "count": tracks.tracks.len(),
                    "histogram": tracks.histogram,
                    "share_high": tracks.share_high,
                    "untracked": tracks.untracked,
                },
            }),
        )?,
        Format::Text => {
            let s = &report.summary;
            writeln!(
                out,
                "images {}, ground truths {} ({} scored), detections {}",
                s.images, s.ground_truths, s.non_dc_gts, s.detections
            )?;
            writeln!(
                out,
                "all detections: TP {}, FP {}, on don't-care {}",
                s.tp_all, s.fp_all, s.ignored
            )?;
            if let Some(l) = lamr {
                writeln!(out, "LAMR: {l:.4}")?;
            }
            if let Some(p) = op {
                writeln!(
                    out,
                    "operating point (FPPI {}): threshold {}, FPPI {:.4}, miss rate {:.4}",
                    args.fppi, p.threshold, p.fppi, p.miss_rate
                )?;
            }
            writeln!(
                out,
                "tracks: {}, share with P_TRACK >= 0.9: {:.3}",
                tracks.tracks.len(),
                tracks.share_high
            )?;
            out.flush()?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let run = Run::new("synth", args);
    let cfg = SynthConfig {
        seed: args.seed,
        n_images: args.images,
        widths: args.widths.parse()?,
        fp_rate: args.fp_rate,
        miss_rate: args.miss_rate,
        image_size: args.image_size,
        frames_per_sequence: args.frames_per_sequence,
        max_objects: args.max_objects,
        ..SynthConfig::default()
    };
    let mut labels = create(&args.labels)?;
    let mut dets = create(&args.dets)?;
    generate(
        &cfg,
        |l| write_jsonl(&mut labels, [l]),
        |d| write_jsonl(&mut dets, [d]),
    )?;
    labels.flush()?;
    dets.flush()?;
    drop((labels, dets));
    run.manifest_for(&args.labels)?;
    run.manifest_for(&args.dets)?;
    Ok(())
}

#[cfg(feature = "dtld")]
pub fn import_dtld(args: &ImportDtldArgs) -> CliResult<()> {
    let mut run = Run::new("import-dtld", args);
    run.input(&args.input);
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::in_file(args.input.display(), e.into()))?;
    let r = anchorscope::dtld::import_dtld(&text)
        .map_err(|e| CliError::in_file(args.input.display(), e))?;
    let mut out = create(&args.out)?;
    write_jsonl(&mut out, &r.labels)?;
    out.flush()?;
    drop(out);
    if r.skipped_objects > 0 {
        log::warn!(
            "skipped {} object(s) without usable state or box",
            r.skipped_objects
        );
    }
    log::info!("{} images, {} records", r.images, r.labels.len());
    run.manifest_for(&args.out)
}
