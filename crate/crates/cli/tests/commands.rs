use dsq_cli::output::{csv_bytes, parse_csv, CSV_HEADER};
use dsq_cli::{cmd_estimate, cmd_report, cmd_sweep, cmd_train, Row, RunConfig};

fn cfg(text: &str) -> RunConfig {
    RunConfig::parse(text).unwrap()
}

fn metric<'a>(rows: &'a [Row], setup: &str, name: &str) -> Option<&'a str> {
    rows.iter()
        .find(|r| r.precision_setup == setup && r.metric == name)
        .map(|r| r.value.as_str())
}

#[test]
fn estimate_writes_a_parseable_table() {
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_estimate(&RunConfig::default(), Some(dir.path())).unwrap();
    let on_disk = std::fs::read(dir.path().join("estimate.csv")).unwrap();
    assert_eq!(on_disk, csv_bytes(&rows).unwrap());
    assert_eq!(parse_csv(&on_disk).unwrap(), rows);
    let text = String::from_utf8(on_disk).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    // Setup labels contain commas, so they must be quoted.
    assert!(text.contains("\"[32,32,32,32]\""));
    let fixed32: Vec<&Row> = rows
        .iter()
        .filter(|r| r.method == "fixed" && r.precision_setup == "[32,32,32,32]")
        .collect();
    assert_eq!(fixed32.len(), 2);
    assert!(fixed32.iter().all(|r| r.value == "1"));
    let methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    for m in [
        "floating-point",
        "fixed",
        "bfp",
        "stashing-fixed",
        "stashing-bfp",
        "dsq",
    ] {
        assert!(methods.contains(&m), "{m} missing");
    }
}

#[test]
fn estimate_honours_explicit_rows() {
    let c = cfg(r#"
        [estimate]
        steps = 7
        rows = [{ method = "bfp", setup = "8,8,8,16" }, { method = "fixed", setup = "16,16,16,16" }]
    "#);
    let rows = cmd_estimate(&c, None).unwrap();
    let setups: Vec<&str> = rows.iter().map(|r| r.precision_setup.as_str()).collect();
    assert_eq!(
        setups,
        ["[8,8,8,16]", "[8,8,8,16]", "[16,16,16,16]", "[16,16,16,16]"]
    );
    assert_eq!(metric(&rows, "[16,16,16,16]", "arith_ratio"), Some("0.25"));
    assert_eq!(metric(&rows, "[16,16,16,16]", "dram_ratio"), Some("0.5"));
}

#[test]
fn invalid_method_setup_pairs_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    for text in [
        "method = \"dsq\"\nsetup = \"16,4,4,16\"",
        "method = \"stashing-bfp\"",
        "method = \"fixed\"\nsetup = \"16,4,4\"",
        "method = \"fixed\"\nsetup = \"bfp:16,bfp:4,bfp:4,bfp:16\"",
        "method = \"floating-point\"\nsetup = \"16,16,16,16\"",
        "method = \"bfp\"\nsetup = \"16,4,4,16\"\n[ladder]\nrungs = [\"16,4,4,16\"]",
        "method = \"dsq\"\n[ladder]\nrungs = [\"8,8,8,8\"]",
        "method = \"dsq\"\n[ladder]\nrungs = [\"16,4,4,16\", \"8,4,4,16\"]",
    ] {
        let c = cfg(text);
        assert!(cmd_train(&c, dir.path()).is_err(), "accepted:\n{text}");
    }
    assert!(RunConfig::parse("methd = \"fixed\"").is_err());
    assert!(RunConfig::parse("method = \"posit\"").is_err());
    assert!(
        std::fs::read_dir(dir.path()).unwrap().next().is_none(),
        "rejected runs wrote output"
    );
}

#[test]
fn empty_sweep_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("[sweep]\nmethod = \"fixed\"\nsetups = []");
    assert!(cmd_sweep(&c, Some(dir.path())).unwrap().is_empty());
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text, format!("{}\n", CSV_HEADER.join(",")));
}

#[test]
fn sweep_rejects_a_bad_grid_up_front() {
    let c = cfg("[sweep]\nmethod = \"fixed\"\nsetups = [\"16,4,4,16\", \"nonsense\"]");
    assert!(cmd_sweep(&c, None).is_err());
    let c = cfg("[sweep]\nmethod = \"dsq\"\nsetups = []");
    assert!(cmd_sweep(&c, None).is_err());
}

/// The q3-sensitivity grid at the default toy budget. The narrowest row is
/// expected to break training; when it does not, it must carry a review flag
/// instead of being reported as a silent success.
#[test]
fn gradient_width_grid() {
    let c = cfg(r#"
        [sweep]
        method = "fixed"
        setups = ["8,8,8,32", "8,8,8,16", "8,8,8,8"]
    "#);
    let rows = cmd_sweep(&c, None).unwrap();
    let order: Vec<&str> = rows
        .iter()
        .filter(|r| r.metric == "verdict")
        .map(|r| r.precision_setup.as_str())
        .collect();
    assert_eq!(order, ["[8,8,8,32]", "[8,8,8,16]", "[8,8,8,8]"]);
    for setup in ["[8,8,8,32]", "[8,8,8,16]"] {
        assert_eq!(
            metric(&rows, setup, "verdict"),
            Some("Converged"),
            "{setup}"
        );
        assert_eq!(metric(&rows, setup, "flag"), None);
    }
    let narrow = metric(&rows, "[8,8,8,8]", "verdict").unwrap();
    match narrow {
        "Failed" => assert_eq!(metric(&rows, "[8,8,8,8]", "flag"), None),
        "Converged" => assert_eq!(metric(&rows, "[8,8,8,8]", "flag"), Some("review")),
        other => panic!("unexpected verdict {other}"),
    }
    // Narrower gradients never cost more.
    let arith = |s| {
        metric(&rows, s, "arith_ratio")
            .unwrap()
            .parse::<f64>()
            .unwrap()
    };
    assert!(
        arith("[8,8,8,8]") <= arith("[8,8,8,16]") && arith("[8,8,8,16]") <= arith("[8,8,8,32]")
    );
}

#[test]
fn train_then_report_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(r#"
        method = "dsq"
        seed = 3
        [training]
        epochs = 3
        steps_per_epoch = 4
        eval_samples = 16
        [task]
        n_samples = 128
        valid_fraction = 0.25
        [ladder]
        rungs = ["2,2,2,16", "16,4,4,16"]
        patience = 1
    "#);
    let run = cmd_train(&c, dir.path()).unwrap();
    assert_eq!(run.summary.steps_completed, 12);
    assert_eq!(run.report.epochs.len(), 4);
    for f in ["metrics.jsonl", "summary.json", "cost.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "epoch",
            "train_loss",
            "valid_loss",
            "token_acc",
            "config",
            "ledger",
        ] {
            assert!(v.get(key).is_some(), "{key} missing from {line}");
        }
    }
    let cost = parse_csv(&std::fs::read(dir.path().join("cost.csv")).unwrap()).unwrap();
    assert_eq!(cost, run.rows);

    let report = cmd_report(&RunConfig::default(), dir.path()).unwrap();
    assert_eq!(report.runs, vec![dir.path().to_path_buf()]);
    for f in ["roofline.svg", "roofline.csv", "loss.svg"] {
        let path = dir.path().join(f);
        assert!(report.files.contains(&path), "{f} not reported");
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }
    let svg = std::fs::read_to_string(dir.path().join("loss.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    // Roofline ordering: non-quantized < quantized baselines < adaptive schedule.
    let intensity = |m: &str| {
        report
            .points
            .iter()
            .find(|(n, _)| n.starts_with(m))
            .map(|(_, p)| p.operational_intensity)
            .unwrap()
    };
    assert!(intensity("floating-point") < intensity("fixed [16,16,16,16]"));
    assert!(intensity("stashing-bfp") < intensity("dsq"));
    assert!(intensity("stashing-fixed") < intensity("dsq"));
}
