use std::path::Path;
use std::process::{Command, Output};

fn reenact(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reenact")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn dataset_then_validation_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = reenact(&["dataset", "--frames", "6", "--resolution", "24", "--out", "ds"], d);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("ds/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["frames"].as_array().unwrap().len(), 6);

    let missing = reenact(&["dataset", "--frames", "3", "--camera", "nope.json", "--out", "bad"], d);
    assert_eq!(code(&missing), 2);
    assert!(!d.join("bad").exists());
    let mode = reenact(&["render", "--mode", "rgbz", "--out", "r"], d);
    assert_eq!(code(&mode), 2);
    let config = reenact(&["--config", "absent.json", "render"], d);
    assert_eq!(code(&config), 2);
}

#[test]
fn config_file_and_flags_merge() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("job.json"),
        r#"{"motion": {"procedural": {"kind": "wave", "frames": 4}}, "render": {"resolution": 20, "mode": "skeleton"}, "out_dir": "from_config"}"#,
    )
    .unwrap();
    let o = reenact(&["--config", "job.json", "--sequential", "dataset", "--resolution", "16"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("from_config/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["resolution"], 16);
    assert_eq!(m["mode"], "skeleton");
    assert_eq!(m["frames"].as_array().unwrap().len(), 4);
}

#[test]
fn render_retarget_and_reenact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let r = reenact(&["render", "--resolution", "32", "--motion-kind", "kick", "--frame", "5", "--preview", "--out", "one"], d);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["color.png", "lit.png", "depth.png", "parts.png", "skeleton.png", "stack.nrcs", "stack.sheet.png"] {
        assert!(d.join("one").join(f).is_file(), "{f}");
    }
    let t = reenact(&["retarget", "--frames", "10", "--target-scale", "1.2", "--out", "m.json"], d);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    let motion: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(motion["frames"].as_array().unwrap().len(), 10);

    let re = reenact(&["reenact", "--motion", "m.json", "--resolution", "24", "--mode", "rgb_mask", "--out", "re"], d);
    assert_eq!(code(&re), 0, "{}", String::from_utf8_lossy(&re.stderr));
    assert!(d.join("re/motion.json").is_file());
    assert!(d.join("re/retarget_report.json").is_file());
}
