mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{imba_lens, path_str};
use imba_lens::synthetic::{write_dataset, SyntheticSpec};
use imba_lens::tensor_io::read_tensor;
use serde_json::Value;

fn dataset(dir: &Path) -> (String, String) {
    let paths = write_dataset(dir, &SyntheticSpec::default()).unwrap();
    (
        path_str(&paths.manifest).to_string(),
        path_str(&paths.annotations).to_string(),
    )
}

fn stdout_json(args: &[&str]) -> Value {
    let out = imba_lens(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn align_reports_fixture_scores() {
    let dir = common::e2e_dir();
    let v = stdout_json(&[
        "align",
        "--manifest",
        path_str(&dir.join("manifest.json")),
        "--annotations",
        path_str(&dir.join("boxes.csv")),
    ]);
    let expected = common::expected();
    let atelectasis = &v["per_class"][0];
    assert_eq!(atelectasis["class"], "Atelectasis");
    assert_eq!(
        atelectasis["mean_iobb"].as_f64().unwrap(),
        expected.pairs[0].iobb
    );
    assert_eq!(v["zero_mass_count"], 0);
}

#[test]
fn dissect_honours_q_and_connectivity() {
    let dir = common::e2e_dir();
    let run = |conn: &str| {
        stdout_json(&[
            "dissect",
            "--manifest",
            path_str(&dir.join("manifest.json")),
            "--annotations",
            path_str(&dir.join("boxes.csv")),
            "--q",
            "0.1",
            "--connectivity",
            conn,
        ])
    };
    assert_eq!(run("8")["disjoint"].as_f64(), Some(2.0));
    assert_eq!(run("4")["disjoint"].as_f64(), Some(2.5));
    assert_eq!(run("4")["connectivity"], 4);
}

#[test]
fn metrics_json_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, _) = dataset(tmp.path());
    let v = stdout_json(&["metrics", "--manifest", &manifest]);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3]["class"], "Average");
    assert_eq!(
        rows[0]["n_pos"].as_u64().unwrap() + rows[0]["n_neg"].as_u64().unwrap(),
        8
    );

    let out_dir = tmp.path().join("out");
    let out = imba_lens(&[
        "metrics",
        "--manifest",
        &manifest,
        "--format",
        "csv",
        "--out",
        path_str(&out_dir),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("class,auroc,ap,mean_prob,n_pos,n_neg\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn loss_report_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, _) = dataset(tmp.path());
    let v = stdout_json(&["loss-report", "--manifest", &manifest, "--loss", "cbfocal"]);
    assert_eq!(v["method"], "cbfocal");
    assert_eq!(v["hyper_params"]["beta"].as_f64(), Some(0.9999));
    assert_eq!(v["hyper_params"]["gamma"].as_f64(), Some(2.0));
    let row = &v["per_class"][0];
    assert_eq!(
        row["N_plus"].as_u64().unwrap() + row["N_minus"].as_u64().unwrap(),
        8
    );
    assert!(row["loss_value"].as_f64().unwrap() > 0.0);
}

#[test]
fn cam_writes_heatmaps_and_index() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, boxes) = dataset(tmp.path());
    let out_dir = tmp.path().join("cams");
    let out = imba_lens(&[
        "cam",
        "--manifest",
        &manifest,
        "--annotations",
        &boxes,
        "--out",
        path_str(&out_dir),
        "--pgm",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let index: Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("index.json")).unwrap()).unwrap();
    let maps = index["heatmaps"].as_array().unwrap();
    assert!(!maps.is_empty());
    for entry in maps {
        let t = read_tensor(out_dir.join(entry["tensor"].as_str().unwrap())).unwrap();
        assert_eq!(t.dims(), &[56, 56]);
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let pgm = fs::read(out_dir.join(entry["pgm"].as_str().unwrap())).unwrap();
        assert!(pgm.starts_with(b"P5\n56 56\n255\n"));
    }
}

#[test]
fn cam_requires_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, boxes) = dataset(tmp.path());
    assert_eq!(
        imba_lens(&["cam", "--manifest", &manifest, "--annotations", &boxes])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn config_file_paths_resolve_next_to_it() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(&tmp.path().join("data"));
    let config = tmp.path().join("run.json");
    fs::write(
        &config,
        r#"{"manifest": "data/manifest.json", "annotations": "data/boxes.csv",
            "dissection": {"q": 0.04, "connectivity": 4}}"#,
    )
    .unwrap();
    let v = stdout_json(&["dissect", "--config", path_str(&config)]);
    assert_eq!(v["q"].as_f64(), Some(0.04));
    assert_eq!(v["connectivity"], 4);
    let v = stdout_json(&[
        "dissect",
        "--config",
        path_str(&config),
        "--connectivity",
        "8",
    ]);
    assert_eq!(v["connectivity"], 8);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, _) = dataset(tmp.path());
    assert_eq!(imba_lens(&["metrics", "--bogus"]).status.code(), Some(1));
    assert_eq!(imba_lens(&["metrics"]).status.code(), Some(1));
    assert_eq!(
        imba_lens(&["metrics", "--manifest", "/no/such/file.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        imba_lens(&["dissect", "--manifest", &manifest, "--q", "0"])
            .status
            .code(),
        Some(1)
    );

    let broken = tmp.path().join("broken.json");
    fs::write(&broken, "{\"layer_shape\": [1, 2]}").unwrap();
    assert_eq!(
        imba_lens(&["metrics", "--manifest", path_str(&broken)])
            .status
            .code(),
        Some(2)
    );

    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "image_id,label,x,y,w,h\n").unwrap();
    let out = imba_lens(&[
        "dissect",
        "--manifest",
        &manifest,
        "--annotations",
        path_str(&empty),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = imba_lens(&[
        "selftest",
        "--trials",
        "30",
        "--inject-fault",
        "corrupt-threshold",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL quantile/"));
}

#[test]
fn selftest_passes_and_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = imba_lens(&[
        "selftest",
        "--trials",
        "100",
        "--seed",
        "3",
        "--out",
        path_str(tmp.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("selftest.json")).unwrap())
            .unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["seed"], 3);
}

#[test]
fn thread_count_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let (manifest, boxes) = dataset(tmp.path());
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_imba-lens"))
            .args(["dissect", "--manifest", &manifest, "--annotations", &boxes])
            .env("IMBA_LENS_THREADS", threads)
            .output()
            .unwrap()
    };
    let one = run("1");
    assert!(one.status.success());
    assert_eq!(one.stdout, run("3").stdout);
    assert_eq!(run("0").status.code(), Some(1));
}
