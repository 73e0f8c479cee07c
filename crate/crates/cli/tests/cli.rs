use std::path::Path;
use std::process::{Command, Output};

fn radsurv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radsurv"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn small_cohort(cwd: &Path) {
    std::fs::write(
        cwd.join("small.toml"),
        "dims = [32, 32, 32]\nsemi_axes_range = [3.0, 5.0]\nk = 3\n",
    )
    .unwrap();
    let o = radsurv(
        &[
            "simulate",
            "--n",
            "20",
            "--seed",
            "7",
            "--config",
            "small.toml",
            "--out",
            "cohort",
        ],
        cwd,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(radsurv(&["frobnicate"], d.path()).status.code(), Some(2));
    assert_eq!(
        radsurv(&["simulate", "--out", "x", "--bogus"], d.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        radsurv(
            &[
                "extract",
                "--cohort",
                "c",
                "--modality",
                "mri",
                "--out",
                "x"
            ],
            d.path()
        )
        .status
        .code(),
        Some(2)
    );
    std::fs::write(d.path().join("bad.toml"), "seed = 1\nbin_widht = 3\n").unwrap();
    let o = radsurv(
        &["simulate", "--config", "bad.toml", "--out", "x"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bin_widht"));
}

#[test]
fn domain_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let o = radsurv(
        &[
            "extract",
            "--cohort",
            "missing",
            "--modality",
            "ct",
            "--out",
            "x.csv",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("IOError"));
    let o = radsurv(&["simulate", "--n", "0", "--out", "c"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ArgumentError"));
}

#[test]
fn extract_writes_one_row_per_patient() {
    let d = tempfile::tempdir().unwrap();
    small_cohort(d.path());
    let o = radsurv(
        &[
            "extract",
            "--cohort",
            "cohort",
            "--modality",
            "ct",
            "--out",
            "ct.csv",
        ],
        d.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(d.path().join("ct.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 21);
    assert!(lines.iter().all(|l| l.split(',').count() == 37));
    assert!(lines[0].starts_with("patient_id,shape.voxel_volume"));

    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("ct.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["command"], "extract");
    assert_eq!(m["config"]["config"]["bin_width"], 25.0);
    assert_eq!(m["config"]["config"]["k"], 8);
    assert_eq!(m["config"]["args"]["modality"], "ct");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn clinical_only_model_round_trip() {
    let d = tempfile::tempdir().unwrap();
    small_cohort(d.path());
    let imaging = radsurv(
        &[
            "select",
            "--cohort",
            "cohort",
            "--blocks",
            "clinical,ct",
            "--out",
            "s.json",
        ],
        d.path(),
    );
    assert_eq!(imaging.status.code(), Some(2));
    let run = |a: &[&str]| {
        let o = radsurv(a, d.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    run(&[
        "fit",
        "--cohort",
        "cohort",
        "--config",
        "small.toml",
        "--out",
        "model.json",
    ]);
    let out = run(&[
        "eval",
        "--cohort",
        "cohort",
        "--config",
        "small.toml",
        "--model",
        "model.json",
        "--out",
        "scores.csv",
    ]);
    assert!(out.contains("c_index_train"));
    let scores = std::fs::read_to_string(d.path().join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 21);
    assert!(scores
        .lines()
        .skip(1)
        .all(|l| ["train", "validation", "test"].contains(&l.split(',').nth(1).unwrap())));
}
