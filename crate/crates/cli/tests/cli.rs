use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splat-colorize"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    let out = run(&[
        "synth", "--splats", "25", "--views", "10", "--width", "24", "--height", "24",
        "--seed", "3", "--out", s(dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn colorize_synthetic_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    synth(&fx);
    let out_ply = tmp.path().join("colored.ply");
    let out = run(&[
        "colorize", "--scene", s(&fx.join("scene.ply")), "--cameras", s(&fx.join("train.json")),
        "--targets", s(&fx.join("images")), "--out", s(&out_ply),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("PSNR"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("colored.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["gaussians"], 25);
    assert_eq!(report["refine_trace"].as_array().unwrap().len(), 6);
    assert!(out_ply.is_file());
}

#[test]
fn missing_target_names_the_view() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    synth(&fx);
    std::fs::remove_file(fx.join("images").join("train_002.splf")).unwrap();
    let out = run(&[
        "colorize", "--scene", s(&fx.join("scene.ply")), "--cameras", s(&fx.join("train.json")),
        "--targets", s(&fx.join("images")), "--out", s(&tmp.path().join("x.ply")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("train_002"), "{}", stderr(&out));
}

#[test]
fn render_then_metrics_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    synth(&fx);
    let r = tmp.path().join("r");
    let out = run(&[
        "render", "--scene", s(&fx.join("scene.ply")), "--cameras", s(&fx.join("test.json")),
        "--out", s(&r), "--format", "raw",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = tmp.path().join("m.json");
    let out = run(&["metrics", "--rendered", s(&r), "--reference", s(&r), "--report", s(&report)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("PSNR inf"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["mean"]["psnr"], "inf");
    assert_eq!(json["mean"]["l2"], 0.0);
}

#[test]
fn clamped_png_render_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    synth(&fx);
    let out = run(&[
        "render", "--scene", s(&fx.join("scene.ply")), "--cameras", s(&fx.join("test.json")),
        "--out", s(&tmp.path().join("png")), "--clamp",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("png").join("test_000.png").is_file());
}

#[test]
fn baseline_writes_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    synth(&fx);
    let trace = tmp.path().join("adam.csv");
    let out = run(&[
        "baseline", "--method", "adam", "--scene", s(&fx.join("scene.ply")),
        "--cameras", s(&fx.join("train.json")), "--targets", s(&fx.join("images")),
        "--test-cameras", s(&fx.join("test.json")), "--test-targets", s(&fx.join("images")),
        "--zero-init", "--steps", "5", "--eval-interval", "1", "--trace", s(&trace),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(trace).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,seconds,train_L2,test_L2");
    assert_eq!(lines.len(), 7);
}

#[test]
fn output_is_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    synth(&fx);
    let mut files = Vec::new();
    for threads in ["1", "3"] {
        let out_ply = tmp.path().join(format!("c{threads}.ply"));
        let out = run(&[
            "--threads", threads, "colorize", "--scene", s(&fx.join("scene.ply")),
            "--cameras", s(&fx.join("train.json")), "--targets", s(&fx.join("images")),
            "--out", s(&out_ply),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        files.push(std::fs::read(out_ply).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn segment_keeps_a_subset() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    synth(&fx);
    // Single-channel all-ones masks keep every visible splat.
    let masks = tmp.path().join("masks");
    std::fs::create_dir_all(&masks).unwrap();
    let cameras: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.join("train.json")).unwrap()).unwrap();
    for v in cameras["views"].as_array().unwrap() {
        let img = splat_colorize::ChannelImage::filled(24, 24, 1, 1.0);
        splat_colorize::io::write_image(&img, masks.join(v["image"].as_str().unwrap()), false).unwrap();
    }
    let out = run(&[
        "segment", "--scene", s(&fx.join("scene.ply")), "--cameras", s(&fx.join("train.json")),
        "--masks", s(&masks), "--out", s(&tmp.path().join("seg.ply")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("of 25 splats"));
}

#[test]
fn bad_input_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bogus = tmp.path().join("nope.ply");
    std::fs::write(&bogus, b"not a ply").unwrap();
    let out = run(&[
        "render", "--scene", s(&bogus), "--cameras", s(&tmp.path().join("c.json")),
        "--out", s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unseen_scene_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    synth(&fx);
    // Move every camera far behind the scene, looking away from it.
    let text = std::fs::read_to_string(fx.join("train.json")).unwrap();
    let mut cams: serde_json::Value = serde_json::from_str(&text).unwrap();
    for v in cams["views"].as_array_mut().unwrap() {
        v["world_to_camera"] = serde_json::json!([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, -50], [0, 0, 0, 1]]);
    }
    let away = tmp.path().join("away.json");
    std::fs::write(&away, cams.to_string()).unwrap();
    let out = run(&[
        "colorize", "--scene", s(&fx.join("scene.ply")), "--cameras", s(&away),
        "--targets", s(&fx.join("images")), "--out", s(&tmp.path().join("x.ply")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
