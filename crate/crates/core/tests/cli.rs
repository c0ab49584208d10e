use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

const ANNOTATIONS: &str = "\
0--Parade/a.jpg
2
10 10 20 20 0 0 0 0 0 0
50 50 30 30 0 0 0 1 0 0
1--Handshaking/b.jpg
0
0 0 0 0 0 0 0 0 0 0
";

fn facekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facekit")).args(args).output().expect("spawn facekit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_annotations(dir: &Path) -> String {
    let p = dir.join("gt.txt");
    std::fs::write(&p, ANNOTATIONS).unwrap();
    p.to_str().unwrap().to_string()
}

fn assert_fails(o: &Output) {
    assert!(!o.status.success(), "expected failure, stdout: {}", stdout(o));
    assert!(!o.stderr.is_empty());
}

#[test]
fn gen_anchors_at_640() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("anchors.txt");
    let o = facekit(&["gen-anchors", "--width", "640", "--height", "640", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("68250"));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 68250);
    assert!(text.lines().next().unwrap().starts_with("P2 "));
    assert!(text.lines().last().unwrap().starts_with("P7 "));
}

#[test]
fn validate_annotations_reports_counts() {
    let dir = tempdir().unwrap();
    let gt = write_annotations(dir.path());
    let o = facekit(&["validate-annotations", &gt]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("images: 2"), "{s}");
    assert!(s.contains("faces: 2"), "{s}");
    assert!(s.contains("invalid faces: 1"), "{s}");
    assert!(s.contains("images without faces: 1"), "{s}");
}

#[test]
fn evaluate_perfect_detections() {
    let dir = tempdir().unwrap();
    let gt = write_annotations(dir.path());
    let dets = dir.path().join("dets");
    std::fs::create_dir_all(dets.join("0--Parade")).unwrap();
    std::fs::write(dets.join("0--Parade/a.txt"), "0--Parade/a.jpg\n1\n10 10 20 20 0.900\n").unwrap();
    let report = dir.path().join("pr.csv");
    let o = facekit(&[
        "evaluate",
        "--dets",
        dets.to_str().unwrap(),
        "--gt",
        &gt,
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("AP: 1.000000"));
    assert!(std::fs::read_to_string(&report).unwrap().starts_with("threshold,precision,recall\n"));
}

#[test]
fn assign_prints_label_counts() {
    let dir = tempdir().unwrap();
    let gt = write_annotations(dir.path());
    let o = facekit(&["assign", "--annotations", &gt, "--image", "0--Parade/a.jpg", "--step", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    for key in ["positive", "negative", "ignored"] {
        assert!(s.contains(key), "{s}");
    }
}

#[test]
fn missing_file_is_an_error() {
    assert_fails(&facekit(&["validate-annotations", "/nonexistent/gt.txt"]));
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("a.txt");
    let o = facekit(&[
        "--set",
        "no.such.key=1",
        "gen-anchors",
        "--width",
        "64",
        "--height",
        "64",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_fails(&o);
    assert!(!out.exists());
}

#[test]
fn bad_step_is_an_error() {
    let dir = tempdir().unwrap();
    let gt = write_annotations(dir.path());
    assert_fails(&facekit(&["assign", "--annotations", &gt, "--image", "0--Parade/a.jpg", "--step", "3"]));
}

#[test]
fn unknown_image_and_level_are_errors() {
    let dir = tempdir().unwrap();
    let gt = write_annotations(dir.path());
    assert_fails(&facekit(&["assign", "--annotations", &gt, "--image", "nope.jpg", "--step", "1"]));
    assert_fails(&facekit(&["attmask", "--annotations", &gt, "--image", "0--Parade/a.jpg", "--level", "P9"]));
}

#[test]
fn config_override_changes_behavior() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("two.cfg");
    std::fs::write(&cfg, "anchor.strides = 4,8\nanchor.stc_levels = 1\n").unwrap();
    let out = dir.path().join("a.txt");
    let o = facekit(&[
        "--config",
        cfg.to_str().unwrap(),
        "gen-anchors",
        "--width",
        "64",
        "--height",
        "64",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 16x16 + 8x8 cells, two anchors each
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2 * (256 + 64));
}
