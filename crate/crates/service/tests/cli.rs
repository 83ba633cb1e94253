use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn femseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_femseg")).args(args).output().unwrap()
}

fn json_out(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn survey_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/survey").join(name)
}

#[test]
fn phantom_delineate_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("phantom");
    let o = femseg(&["--json", "phantom", "--out", s(&dir)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json_out(&o)["slices"], 60);
    assert!(dir.join("truth.json").exists());

    let o = femseg(&["--json", "ingest", s(&dir)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json_out(&o)["dims"], serde_json::json!([256, 256]));

    let pred = tmp.path().join("pred.json");
    let overlays = tmp.path().join("overlays");
    let o = femseg(&[
        "--json",
        "delineate",
        s(&dir),
        "--side",
        "both",
        "--out",
        s(&pred),
        "--overlays",
        s(&overlays),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json_out(&o)["sides"].as_array().unwrap().len(), 2);
    let set: Value = serde_json::from_str(&std::fs::read_to_string(&pred).unwrap()).unwrap();
    assert_eq!(set["v"], 1);
    assert!(overlays.join("overlay_0040.png").exists());

    let o = femseg(&["--json", "eval", "--pred", s(&pred), "--truth", s(&dir.join("truth_delineation.json"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json_out(&o);
    for side in report["sides"].as_array().unwrap() {
        let d = side["dice"].as_f64().unwrap();
        assert!(d >= 0.95, "{side}");
        assert!(side["jaccard"].as_f64().unwrap() <= d);
    }

    let params = tmp.path().join("params.json");
    std::fs::write(&params, r#"{"side": "right", "bogus": 1}"#).unwrap();
    let o = femseg(&["delineate", s(&dir), "--params", s(&params), "--out", s(&pred)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_reports_stage_of_unknown_op() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("series");
    let o = femseg(&["phantom", "--out", s(&dir)]);
    assert_eq!(o.status.code(), Some(0));

    let spec = tmp.path().join("spec.json");
    std::fs::write(&spec, r#"{"name":"x","stages":[{"op":"frobnicate","params":{}}]}"#).unwrap();
    let o = femseg(&["run", s(&spec), s(&dir)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("UnknownOp") && err.contains("stage 0"), "{err}");

    std::fs::write(&spec, r#"{"name":"x","stages":[{"op":"invert"},{"op":"invert"}]}"#).unwrap();
    let out = tmp.path().join("run");
    let o = femseg(&["--json", "run", s(&spec), s(&dir), "--slice", "40", "--window", "400,40", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rec = &json_out(&o)["record"];
    assert_eq!(rec["input_digest"], rec["output_digest"]);
    assert!(out.join("stage_00_invert.png").exists());
    assert!(out.join("record.json").exists());

    // HU input to a point op: stage failure, user error
    std::fs::write(&spec, r#"{"name":"x","stages":[{"op":"gamma"}]}"#).unwrap();
    let o = femseg(&["run", s(&spec), s(&dir)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("StageFailure"));
}

#[test]
fn tally_survey_two() {
    let o = femseg(&["--json", "tally", s(&survey_fixture("survey_two.csv"))]);
    assert_eq!(o.status.code(), Some(0));
    let report = json_out(&o);
    let groups = report["groups"].as_array().unwrap();
    let manual = groups.iter().find(|g| g["source"] == "manual").unwrap();
    let pct = manual["percent"]["none_needed"].as_f64().unwrap();
    assert_eq!((pct * 10.0).round() / 10.0, 77.8);
    let auto = groups.iter().find(|g| g["source"] == "automatic").unwrap();
    let total: f64 = auto["percent"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 100.0).abs() <= 0.1);

    let o = femseg(&["tally", s(&survey_fixture("survey_one.csv"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("both 90.0%"));
}

#[test]
fn user_errors_exit_one() {
    assert_eq!(femseg(&["ingest", "/definitely/not/here"]).status.code(), Some(1));
    assert_eq!(femseg(&["--frobnicate"]).status.code(), Some(1));
    assert_eq!(femseg(&["run"]).status.code(), Some(1));
    assert_eq!(femseg(&["--help"]).status.code(), Some(0));

    let tmp = tempfile::tempdir().unwrap();
    let votes = tmp.path().join("v.csv");
    std::fs::write(&votes, "survey,rater,item,region,source,verdict\none,r,i,proximal,,small\n").unwrap();
    let o = femseg(&["--json", "tally", s(&votes)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MixedVerdictDomain"));
    assert_eq!(json_out(&o)["exit"], 1);
}
