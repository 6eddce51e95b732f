//! End-to-end checks of the `tilefuse` binary: subcommand chain, config
//! precedence, stage-tagged failures, and report structure.

use std::path::Path;
use std::process::{Command, Output};

fn tilefuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilefuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> serde_json::Value {
    let out = tilefuse(args);
    assert!(
        out.status.success(),
        "tilefuse {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn subcommand_chain_recovers_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let tiles = dir.path().join("tiles");
    let dets = dir.path().join("dets.jsonl");
    let fused = dir.path().join("fused.json");
    let labels = dir.path().join("labels.bsq");
    let report = dir.path().join("report.json");

    run_ok(&[
        "synth", "--width", "900", "--height", "700", "--objects", "25",
        "--sizes", "15:80", "--shape", "convex-polygon", "--seed", "3",
        "--out", &path_str(&scene),
    ]);
    let raster = scene.join("scene_3.bsq");
    assert!(raster.exists() && scene.join("gt.json").exists());

    let tiled = run_ok(&[
        "tile", "--input", &path_str(&raster), "--window", "384", "--stride", "256",
        "--margin", "2", "--out", &path_str(&tiles),
    ]);
    // 900/384/256 -> 4 columns, 700 -> 3 rows.
    assert_eq!(tiled["tiles_written"], 12);

    run_ok(&[
        "detect-sim", "--scene", &path_str(&scene),
        "--manifest", &path_str(&tiles.join("tiles.json")),
        "--out", &path_str(&dets),
    ]);

    let fuse_out = run_ok(&[
        "fuse", "--manifest", &path_str(&tiles.join("tiles.json")),
        "--dets", &path_str(&dets),
        "--out", &path_str(&fused), "--labelmap", &path_str(&labels),
    ]);
    assert_eq!(fuse_out["fused_instances"], 25);
    assert!(labels.exists());

    let eval = run_ok(&[
        "eval", "--gt", &path_str(&scene.join("gt.json")), "--pred", &path_str(&fused),
        "--report", &path_str(&report),
    ]);
    assert_eq!(eval["ap50"], 100.0);
    assert_eq!(eval["miou"], 100.0);
    assert_eq!(eval["score1"], 100.0);
    assert!(report.exists());
}

#[test]
fn pipeline_report_is_complete_and_timing_additive() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    run_ok(&[
        "synth", "--width", "1100", "--height", "800", "--objects", "40",
        "--sizes", "20:90", "--seed", "11", "--out", &path_str(&scene),
    ]);

    let report = run_ok(&[
        "pipeline",
        "--input", &path_str(&scene.join("scene_11.bsq")),
        "--gt", &path_str(&scene.join("gt.json")),
        "--simulate",
        "--window", "512", "--stride", "384", "--margin", "2",
        "--soft-nms", "gaussian",
        "--out", &path_str(&dir.path().join("out")),
        "--eff", "80", "--cod", "90", "--doc", "90",
    ]);
    assert_eq!(report["eval"]["ap50"], 100.0);
    assert_eq!(report["eval"]["score1"], 100.0);
    let s2 = report["eval"]["score2"].as_f64().unwrap();
    assert!((s2 - (0.5 * 100.0 + 0.3 * 80.0 + 0.1 * 90.0 + 0.1 * 90.0)).abs() < 1e-9);

    let t = &report["timings"];
    let sum = ["tile_ms", "detect_ms", "fuse_ms", "eval_ms"]
        .iter()
        .map(|k| t[k].as_f64().unwrap())
        .sum::<f64>();
    let total = t["total_ms"].as_f64().unwrap();
    assert!(
        (sum - total).abs() <= 0.05 * total,
        "stage sum {sum} vs total {total}"
    );

    for artifact in ["tiles.json", "dets.jsonl", "fused.json", "report.json"] {
        assert!(dir.path().join("out").join(artifact).exists(), "{artifact}");
    }
}

#[test]
fn pipeline_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    run_ok(&[
        "synth", "--width", "800", "--height", "800", "--objects", "10",
        "--sizes", "15:60", "--seed", "5", "--out", &path_str(&scene),
    ]);

    let config = dir.path().join("cfg.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "gt": scene.join("gt.json"),
            "simulate": true,
            "window": 512,
            "stride": 384,
            "margin": 2,
            "out": dir.path().join("out_cfg"),
        })
        .to_string(),
    )
    .unwrap();

    // Config alone: 800/512/384 gives 2 tiles per axis.
    let from_file = run_ok(&["pipeline", "--config", &path_str(&config)]);
    assert_eq!(from_file["tiles"], 4);

    // Window/stride flags win over the file: 800/256/192 gives 4 per axis.
    let overridden = run_ok(&[
        "pipeline", "--config", &path_str(&config),
        "--window", "256", "--stride", "192",
        "--out", &path_str(&dir.path().join("out_flag")),
    ]);
    assert_eq!(overridden["tiles"], 16);
}

#[test]
fn pipeline_failure_is_stage_tagged_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    run_ok(&[
        "synth", "--width", "600", "--height", "600", "--objects", "5",
        "--sizes", "15:40", "--seed", "2", "--out", &path_str(&scene),
    ]);

    let out = tilefuse(&[
        "pipeline",
        "--gt", &path_str(&scene.join("gt.json")),
        "--dets", &path_str(&dir.path().join("missing.jsonl")),
        "--out", &path_str(&dir.path().join("out")),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage `detect`"), "stderr: {stderr}");
}

#[test]
fn pipeline_outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    run_ok(&[
        "synth", "--width", "1000", "--height", "1000", "--objects", "35",
        "--sizes", "15:80", "--seed", "9", "--out", &path_str(&scene),
    ]);
    let noise = dir.path().join("noise.json");
    std::fs::write(
        &noise,
        r#"{"p_drop":0.1,"bbox_jitter":2.0,"score_law":{"alpha":8.0,"beta":2.0},"p_spurious":0.5,"seed":21}"#,
    )
    .unwrap();

    let mut fused_bytes = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("out_{threads}"));
        run_ok(&[
            "pipeline", "--threads", threads,
            "--gt", &path_str(&scene.join("gt.json")),
            "--simulate", "--noise", &path_str(&noise),
            "--window", "512", "--stride", "384",
            "--soft-nms", "gaussian",
            "--out", &path_str(&out),
        ]);
        fused_bytes.push(std::fs::read(out.join("fused.json")).unwrap());
    }
    assert_eq!(fused_bytes[0], fused_bytes[1], "fused output must be byte-identical");
}
