use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_anchorscope"));
    c.env_remove("ANCHORSCOPE_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).expect("valid JSON on stdout")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/configs")
        .join(name)
        .display()
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn help_and_version_exit_zero() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
    assert!(run(&["eval", "--help"]).status.success());
}

#[test]
fn bad_arguments_exit_one() {
    let out = run(&["eval", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["stride-advice", "--width", "5", "--iou", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_is_a_json_error() {
    let out = run(&["--json-errors", "eval", "/no/such/labels", "/no/such/dets"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "io");
    assert_eq!(v["error"]["exit_code"], 1);
}

#[test]
fn rf_prints_the_summary_table() {
    let text = ok(&["rf", "builtin:inception_v3", "--input", "512x2048"]);
    let b4 = text
        .lines()
        .find(|l| l.starts_with("inception_b4"))
        .unwrap();
    let cols: Vec<&str> = b4.split_whitespace().collect();
    assert_eq!(&cols[1..4], &["31", "127", "16"]);
    assert!(b4.ends_with("47x47 / 927x927"));
    assert_eq!(text.lines().count(), 15);

    let v = json(&[
        "rf",
        "builtin:inception_v3",
        "--input",
        "512x2048",
        "--format",
        "json",
    ]);
    let layers = v["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 14);
    assert_eq!(layers[2]["layer"], "conv_2");
    assert_eq!(layers[2]["rf_max"], 7);
}

#[test]
fn rf_reads_a_network_file_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rf.csv");
    let net = config("inception_v3.netcfg");
    ok(&[
        "rf",
        &net,
        "--input",
        "512x2048",
        "--format",
        "csv",
        "--out",
        s(&out),
    ]);
    let rows = read_csv(&out);
    assert_eq!(rows.len(), 14);
    assert_eq!(rows[13], ["inception_c2", "15", "63", "32", "79", "1311"]);

    let m: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("rf.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(m["subcommand"], "rf");
    let input = &m["inputs"][0];
    assert_eq!(input["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(
        input["bytes"].as_u64().unwrap(),
        std::fs::metadata(&net).unwrap().len()
    );
}

#[test]
fn stride_advice_reports_the_bound() {
    let v = json(&[
        "stride-advice",
        "--iou",
        "0.5",
        "--width",
        "5",
        "--format",
        "json",
    ]);
    let a = &v["advice"];
    assert!((a["max_stride_fraction"].as_f64().unwrap() - 0.3431).abs() < 1e-3);
    assert!((a["max_stride_px"].as_f64().unwrap() - 1.7157).abs() < 1e-3);
    assert!(v["check"].is_null());

    let v = json(&[
        "stride-advice",
        "--width",
        "5",
        "--stride",
        "16",
        "--format",
        "json",
    ]);
    assert_eq!(v["check"]["ok"], false);
    let ox = v["check"]["offsets_x"].as_array().unwrap();
    // Neighbouring offsets must be at most 1.7157 px apart at stride 16.
    for w in ox.windows(2) {
        let d = (w[1].as_f64().unwrap() - w[0].as_f64().unwrap()) * 16.0;
        assert!(d <= 1.7158, "{d}");
    }
}

#[test]
fn priors_counts_and_emits_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let emit = dir.path().join("boxes.csv");
    let v = json(&[
        "priors",
        &config("b4_original.priorcfg"),
        "--input",
        "64x256",
        "--emit",
        s(&emit),
        "--format",
        "json",
    ]);
    assert_eq!(v["total_priors"], 3 * 15 * 18);
    assert_eq!(v["layouts"][0]["effective_stride_x"], 16.0);
    assert_eq!(read_csv(&emit).len(), 810);
    assert!(dir.path().join("boxes.csv.manifest.json").exists());
}

#[test]
fn coverage_contrasts_the_layouts() {
    let args = |cfg: &str| {
        json(&[
            "coverage",
            &config(cfg),
            "--synthetic",
            "2000",
            "--seed",
            "3",
            "--format",
            "json",
        ])
    };
    let adapted = args("b4_adapted.priorcfg")["covered_share"]
        .as_f64()
        .unwrap();
    let original = args("b4_original.priorcfg")["covered_share"]
        .as_f64()
        .unwrap();
    assert!(adapted > 0.95, "{adapted}");
    assert!(original < adapted, "{original}");
}

#[test]
fn coverage_from_labels() {
    let v = json(&[
        "coverage",
        &config("b4_adapted.priorcfg"),
        "--labels",
        &fixture("five_labels.jsonl"),
        "--format",
        "json",
    ]);
    assert_eq!(v["ground_truths"], 6);
}

// The fixture enumerates, by descending confidence (IoU threshold 0.3, five
// images, five scored objects):
//   0.9 TP  0.8 FP  0.7 on a don't-care object  0.6 TP  0.5 FP  0.4 TP
//   0.3 FP (IoU 0.2 with its object)  0.2 FP
fn expected_counts(threshold: f64) -> (u64, u64) {
    let confs = [
        (0.9, 'T'),
        (0.8, 'F'),
        (0.7, 'I'),
        (0.6, 'T'),
        (0.5, 'F'),
        (0.4, 'T'),
        (0.3, 'F'),
        (0.2, 'F'),
    ];
    let mut tp = 0;
    let mut fp = 0;
    for (c, kind) in confs {
        if c >= threshold {
            match kind {
                'T' => tp += 1,
                'F' => fp += 1,
                _ => {}
            }
        }
    }
    (tp, fp)
}

#[test]
fn eval_fixture_matches_hand_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let (roc, width, track) = (
        dir.path().join("roc.csv"),
        dir.path().join("width.csv"),
        dir.path().join("track.csv"),
    );
    let v = json(&[
        "eval",
        &fixture("five_labels.jsonl"),
        &fixture("five_dets.jsonl"),
        "--lamr",
        "--format",
        "json",
        "--emit-roc",
        s(&roc),
        "--emit-width",
        s(&width),
        "--emit-track",
        s(&track),
        "--bin-width",
        "5",
    ]);
    let sm = &v["summary"];
    assert_eq!(sm["images"], 5);
    assert_eq!(sm["ground_truths"], 6);
    assert_eq!(sm["non_dc_gts"], 5);
    assert_eq!(sm["tp_all"], 3);
    assert_eq!(sm["fp_all"], 4);
    assert_eq!(sm["ignored"], 1);
    // Miss rates 0.8, 0.4 and 0.4 at FPPI 0.1, 1 and 10.
    assert_eq!(v["lamr"].as_f64().unwrap(), (0.8 + 0.4 + 0.4) / 3.0);
    assert_eq!(v["operating_point"]["threshold"], 0.001);
    assert_eq!(v["operating_point"]["fppi"], 0.8);
    assert_eq!(v["operating_point"]["miss_rate"], 0.4);

    let rows = read_csv(&roc);
    assert_eq!(rows.len(), 1000);
    for (k, r) in rows.iter().enumerate() {
        let t = (k + 1) as f64 / 1000.0;
        assert_eq!(r[0].parse::<f64>().unwrap(), t);
        let (tp, fp) = expected_counts(t);
        assert_eq!(r[1].parse::<u64>().unwrap(), tp, "tp at {t}");
        assert_eq!(r[2].parse::<u64>().unwrap(), fp, "fp at {t}");
        assert_eq!(r[3].parse::<u64>().unwrap(), 5 - tp);
        assert_eq!(r[4].parse::<f64>().unwrap(), fp as f64 / 5.0);
        assert_eq!(r[5].parse::<f64>().unwrap(), (5 - tp) as f64 / 5.0);
    }

    // Widths 5 (missed), 10, 10, 12 (missed) and 20 at threshold 0.001.
    let bins = read_csv(&width);
    let want = [
        ["0", "5", "0", "0", ""],
        ["5", "10", "1", "0", "0"],
        ["10", "15", "3", "2", "0.6666666666666666"],
        ["15", "20", "0", "0", ""],
        ["20", "25", "1", "1", "1"],
    ];
    assert_eq!(bins.len(), want.len());
    for (got, want) in bins.iter().zip(want) {
        let got: Vec<f64> = got.iter().map(|c| c.parse().unwrap_or(f64::NAN)).collect();
        for (g, w) in got.iter().zip(want) {
            match w.parse::<f64>() {
                Ok(w) => assert_eq!(*g, w),
                Err(_) => assert!(g.is_nan()),
            }
        }
    }

    let tracks = read_csv(&track);
    assert_eq!(
        tracks,
        [
            ["s1/t1", "2", "2", "1.0"],
            ["s1/t2", "1", "1", "1.0"],
            ["s2/t3", "2", "0", "0.0"],
        ]
    );
    assert_eq!(v["tracks"]["share_high"].as_f64().unwrap(), 2.0 / 3.0);
    for p in [&roc, &width, &track] {
        let mut m = p.as_os_str().to_owned();
        m.push(".manifest.json");
        assert!(PathBuf::from(m).exists());
    }
}

#[test]
fn eval_state_filter() {
    let v = json(&[
        "eval",
        &fixture("five_labels.jsonl"),
        &fixture("five_dets.jsonl"),
        "--state",
        "red",
        "--format",
        "json",
    ]);
    let sm = &v["summary"];
    assert_eq!(sm["non_dc_gts"], 4);
    assert_eq!(sm["dropped_detections"], 2);
    assert_eq!(sm["tp_all"], 3);
    assert_eq!(sm["fp_all"], 2);
    assert_eq!(v["operating_point"]["miss_rate"], 0.25);
    assert_eq!(v["operating_point"]["fppi"], 0.4);
}

#[test]
fn eval_rejects_detections_on_unknown_images() {
    let dir = tempfile::tempdir().unwrap();
    let dets = dir.path().join("d.jsonl");
    std::fs::write(
        &dets,
        r#"{"image_id":"nowhere","x":1,"y":1,"w":2,"h":6,"confidence":0.5,"state":"red"}"#,
    )
    .unwrap();
    let out = run(&["eval", &fixture("five_labels.jsonl"), s(&dets)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn malformed_lines_fail_or_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let dets = dir.path().join("d.jsonl");
    let good = std::fs::read_to_string(fixture("five_dets.jsonl")).unwrap();
    std::fs::write(&dets, format!("{good}{{\"image_id\": \"im1\", \"x\": \n")).unwrap();
    let labels = fixture("five_labels.jsonl");

    let out = run(&["eval", &labels, s(&dets)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 9"));

    let v = json(&[
        "--on-error",
        "skip",
        "eval",
        &labels,
        s(&dets),
        "--format",
        "json",
    ]);
    assert_eq!(v["summary"]["detections"], 8);
}

#[test]
fn synth_is_deterministic_and_scores_as_configured() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = ["a.l", "a.d", "b.l", "b.d"]
        .iter()
        .map(|n| dir.path().join(n))
        .collect();
    for pair in paths.chunks(2) {
        ok(&[
            "synth",
            "--seed",
            "11",
            "--images",
            "200",
            "--miss-rate",
            "0",
            "--fp-rate",
            "0",
            "--labels",
            s(&pair[0]),
            "--dets",
            s(&pair[1]),
        ]);
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&paths[0]), read(&paths[2]));
    assert_eq!(read(&paths[1]), read(&paths[3]));
    assert!(dir.path().join("a.l.manifest.json").exists());

    let v = json(&["eval", s(&paths[0]), s(&paths[1]), "--format", "json"]);
    let sm = &v["summary"];
    assert_eq!(sm["images"], 200);
    assert_eq!(sm["fp_all"], 0);
    assert_eq!(sm["tp_all"], sm["non_dc_gts"]);
}

#[test]
fn nms_keeps_one_box_per_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    let out = dir.path().join("final.jsonl");
    std::fs::write(
        &raw,
        concat!(
            r#"{"image_id":"a","x":10,"y":10,"w":10,"h":30,"confidence":0.4,"state_scores":[0.1,0.7,0.1,0.1]}"#, "\n",
            r#"{"image_id":"a","x":11,"y":10,"w":10,"h":30,"confidence":0.9,"state_scores":[0.1,0.1,0.1,0.7]}"#, "\n",
            r#"{"image_id":"b","x":11,"y":10,"w":10,"h":30,"confidence":0.5,"state_scores":[0.7,0.1,0.1,0.1]}"#, "\n",
            r#"{"image_id":"a","x":90,"y":10,"w":10,"h":30,"confidence":0.2,"state_scores":[0.1,0.1,0.7,0.1]}"#, "\n",
        ),
    )
    .unwrap();
    ok(&["nms", s(&raw), "--emit", s(&out)]);
    let kept: Vec<Value> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(kept.len(), 3);
    assert_eq!(kept[0]["image_id"], "a");
    assert_eq!(kept[0]["confidence"], 0.9);
    assert_eq!(kept[0]["state"], "green");
    assert_eq!(kept[1]["state"], "yellow");
    assert_eq!(kept[2]["image_id"], "b");
    assert!(dir.path().join("final.jsonl.manifest.json").exists());
}

#[test]
fn loss_accumulates_over_images() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("l.jsonl");
    let preds = dir.path().join("p.jsonl");
    std::fs::write(
        &labels,
        "{\"image_id\":\"a\",\"x\":20,\"y\":5,\"w\":10,\"h\":33,\"state\":\"red\",\"tags\":[\"front\"]}\n{\"image_id\":\"b\"}\n",
    )
    .unwrap();
    // All-zero outputs: every confidence term is ln 2.
    let mut rows = String::new();
    for im in ["a", "b"] {
        for _ in 0..810 {
            rows.push_str(&format!(
                "{{\"image_id\":\"{im}\",\"conf\":[0,0],\"loc\":[0,0,0,0],\"state\":[0,0,0,0]}}\n"
            ));
        }
    }
    std::fs::write(&preds, rows).unwrap();
    let v = json(&[
        "loss",
        &config("b4_original.priorcfg"),
        s(&labels),
        s(&preds),
        "--input",
        "64x256",
        "--negatives",
        "all",
    ]);
    let l = &v["loss"];
    assert_eq!(v["images"], 2);
    let n = l["matched"].as_f64().unwrap();
    assert!(n >= 1.0);
    let ln2 = std::f64::consts::LN_2;
    // Confidence loss over all 1620 rows; state loss 4 ln 2 per matched prior.
    assert!((l["conf"].as_f64().unwrap() - 1620.0 * ln2).abs() < 1e-9);
    assert!((l["state"].as_f64().unwrap() - 4.0 * n * ln2).abs() < 1e-9);

    let out = run(&[
        "loss",
        &config("b4_original.priorcfg"),
        s(&labels),
        s(&preds),
        "--input",
        "128x256",
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "row count must match prior count"
    );
}

#[test]
fn reports_are_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let labels = fixture("five_labels.jsonl");
    let dets = fixture("five_dets.jsonl");
    let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
    for round in 0..2 {
        let p = |n: &str| dir.path().join(format!("{round}_{n}"));
        let mut stdout = Vec::new();
        stdout.push(ok(&[
            "eval",
            &labels,
            &dets,
            "--lamr",
            "--format",
            "json",
            "--emit-roc",
            s(&p("roc")),
            "--emit-width",
            s(&p("width")),
            "--emit-track",
            s(&p("track")),
        ]));
        stdout.push(ok(&[
            "coverage",
            &config("b4_original.priorcfg"),
            "--synthetic",
            "300",
            "--seed",
            "5",
            "--format",
            "csv",
            "--out",
            s(&p("cov")),
        ]));
        stdout.push(ok(&[
            "rf",
            "builtin:inception_v3",
            "--input",
            "512x2048",
            "--all",
        ]));
        ok(&[
            "synth",
            "--seed",
            "2",
            "--images",
            "30",
            "--labels",
            s(&p("sl")),
            "--dets",
            s(&p("sd")),
        ]);
        let mut files: Vec<Vec<u8>> = ["roc", "width", "track", "cov", "sl", "sd"]
            .iter()
            .map(|n| std::fs::read(p(n)).unwrap())
            .collect();
        files.extend(stdout.into_iter().map(String::into_bytes));
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}
