//! Acceptance suite: every release criterion in one sequential run, one
//! pass/fail line per criterion.
//!
//! Run with `cargo test -p tilefuse --test acceptance -- --nocapture` to see
//! the per-criterion lines as they complete. Criteria keep running after a
//! failure so one run reports the full picture; the test itself fails if
//! any criterion failed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tilefuse::pipeline::{run_pipeline, PipelineConfig};
use tilefuse_core::fusion::{fuse, fuse_with_policy, soft_nms, RetentionPolicy};
use tilefuse_core::instances::{
    write_annotations, BBox, BitGrid, Detection, GlobalInstance, InstanceSet, RleMask,
};
use tilefuse_core::metrics::{ap50, evaluate, score1, ApInterpolation};
use tilefuse_core::naive;
use tilefuse_core::synth::{
    generate_scene, simulate_over_manifest, NoiseConfig, SceneConfig, ScoreLaw, ShapeKind,
};
use tilefuse_core::tiling::{compute_tile_grid, GridParams, TileManifest};
use tilefuse_core::SoftNmsParams;

type CritResult = Result<String, String>;
type Criterion = (&'static str, fn() -> CritResult);
/// Sort key freezing everything the ground-truth comparison cares about:
/// mask frame, run counts, box bits, and score bits.
type CanonicalInstance = (u32, u32, u32, u32, Vec<u32>, [u64; 4], u64);

#[test]
fn acceptance() {
    let criteria: Vec<Criterion> = vec![
        ("target-area partition", c1_target_partition),
        ("fusion oracle, perfect detector", c2_fusion_oracle),
        ("fusion benefit over keep-everything", c3_fusion_benefit),
        ("ap50 brute-force equivalence", c4_ap_oracle),
        ("score formula consistency", c5_formula_consistency),
        ("rle round-trip", c6_rle_roundtrip),
        ("soft-nms closed forms", c7_softnms_closed_form),
        ("desk-scale throughput", c8_throughput),
        ("thread-count determinism", c9_determinism),
    ];

    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS [{secs:.1}s] {detail}", i + 1),
            Err(reason) => {
                println!("criterion {} ({name}): FAIL [{secs:.1}s] {reason}", i + 1);
                failures.push(i + 1);
            }
        }
    }
    assert!(failures.is_empty(), "criteria failed: {failures:?}");
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "non-string panic".to_string())
}

// -------------------------------------------------------------------------
// Criterion 1: for randomized (L, W, S, m) the global target intervals are
// pairwise disjoint and cover [0, L) exactly. 1000 tuples, < 10 s.
// -------------------------------------------------------------------------
fn c1_target_partition() -> CritResult {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..1000u32 {
        let l = rng.random_range(1..=20_000u32);
        let w = rng.random_range(8..=2_048u32);
        let s = rng.random_range(1..=w);
        let m = rng.random_range(0..=w - s);
        let params = GridParams::new(w, s, m).map_err(|e| format!("case {case}: {e}"))?;
        let grid =
            compute_tile_grid(l, 1, params).map_err(|e| format!("case {case}: {e}"))?;

        let mut cursor = 0u32;
        for tile in &grid.tiles {
            let g = tile.target_global();
            if g.x != cursor {
                return Err(format!(
                    "case {case} (L={l} W={w} S={s} m={m}): target starts at {} expected {cursor}",
                    g.x
                ));
            }
            if g.w == 0 {
                return Err(format!("case {case}: empty target interval"));
            }
            cursor = g.right();
        }
        if cursor != l {
            return Err(format!(
                "case {case} (L={l} W={w} S={s} m={m}): cover ends at {cursor}"
            ));
        }
    }
    Ok("1000 randomized grids partition exactly".into())
}

// -------------------------------------------------------------------------
// Criterion 2: 20 seeded 5000x5000 scenes, 300 objects of side 40-220,
// grid 1536/1280/margin 2, perfect detector: fused == ground truth, with
// AP50 = mIoU = Score1 = 100.0 exactly and zero duplicates. < 2 min.
// -------------------------------------------------------------------------
fn c2_scene(seed: u64) -> SceneConfig {
    SceneConfig {
        width: 5000,
        height: 5000,
        n_objects: 300,
        size_min: 40,
        size_max: 220,
        shape: if seed.is_multiple_of(2) {
            ShapeKind::Rectangle
        } else {
            ShapeKind::ConvexPolygon
        },
        min_gap: 2,
        seed,
    }
}

fn canonical(set: &InstanceSet<f64>) -> Vec<CanonicalInstance> {
    let mut v: Vec<_> = set
        .instances
        .iter()
        .map(|i| {
            (
                i.origin_x,
                i.origin_y,
                i.mask.width(),
                i.mask.height(),
                i.mask.counts().to_vec(),
                [
                    i.bbox.x.to_bits(),
                    i.bbox.y.to_bits(),
                    i.bbox.w.to_bits(),
                    i.bbox.h.to_bits(),
                ],
                i.score.to_bits(),
            )
        })
        .collect();
    v.sort();
    v
}

fn group_by_tile(flat: Vec<Detection<f64>>) -> BTreeMap<String, Vec<Detection<f64>>> {
    let mut grouped: BTreeMap<String, Vec<Detection<f64>>> = BTreeMap::new();
    for d in flat {
        grouped.entry(d.tile_id.clone()).or_default().push(d);
    }
    grouped
}

fn c2_fusion_oracle() -> CritResult {
    let params = GridParams::new(1536, 1280, 2).expect("valid grid params");
    for seed in 1..=20u64 {
        let (_, gt) = generate_scene::<f64>(&c2_scene(seed)).map_err(|e| e.to_string())?;
        let grid = compute_tile_grid(5000, 5000, params).map_err(|e| e.to_string())?;
        let manifest = TileManifest::from_grid(&grid, &gt.image_id);

        let dets = simulate_over_manifest(&gt, &manifest, &NoiseConfig::perfect())
            .map_err(|e| e.to_string())?;
        let fused = fuse(&group_by_tile(dets), &manifest, None).map_err(|e| e.to_string())?;

        if fused.instances.len() != gt.instances.len() {
            return Err(format!(
                "seed {seed}: {} fused vs {} ground truth (duplicates or losses)",
                fused.instances.len(),
                gt.instances.len()
            ));
        }
        if canonical(&fused) != canonical(&gt) {
            return Err(format!("seed {seed}: fused set differs from ground truth"));
        }

        let report = evaluate(
            std::slice::from_ref(&gt),
            std::slice::from_ref(&fused),
            ApInterpolation::AllPoints,
            None,
        )
        .map_err(|e| e.to_string())?;
        if report.ap50 != 100.0 || report.miou != 100.0 || report.score1 != 100.0 {
            return Err(format!(
                "seed {seed}: expected exact 100s, got ap50={} miou={} score1={}",
                report.ap50, report.miou, report.score1
            ));
        }
    }
    Ok("20 scenes recovered exactly; all scores 100.0".into())
}

// -------------------------------------------------------------------------
// Criterion 3: on 10 seeded noisy scenes (p_drop 0.05, jitter 2 px,
// 0.5 spurious/tile), target-area fusion beats the keep-everything
// baseline on Score1, strictly, on every scene.
// -------------------------------------------------------------------------
fn c3_noise(seed: u64) -> NoiseConfig<f64> {
    NoiseConfig {
        p_drop: 0.05,
        bbox_jitter: 2.0,
        score_law: Some(ScoreLaw { alpha: 8.0, beta: 2.0 }),
        p_spurious: 0.5,
        seed,
    }
}

fn c3_fusion_benefit() -> CritResult {
    let params = GridParams::new(1536, 1280, 2).expect("valid grid params");
    let nms = SoftNmsParams::default();
    let mut min_delta = f64::INFINITY;
    for i in 0..10u64 {
        let (_, gt) = generate_scene::<f64>(&c2_scene(100 + i)).map_err(|e| e.to_string())?;
        let grid = compute_tile_grid(5000, 5000, params).map_err(|e| e.to_string())?;
        let manifest = TileManifest::from_grid(&grid, &gt.image_id);
        let per_tile = group_by_tile(
            simulate_over_manifest(&gt, &manifest, &c3_noise(200 + i)).map_err(|e| e.to_string())?,
        );

        let mut scores = [0.0f64; 2];
        for (slot, policy) in [RetentionPolicy::TargetArea, RetentionPolicy::KeepAll]
            .into_iter()
            .enumerate()
        {
            let out = fuse_with_policy(&per_tile, &manifest, Some(&nms), policy)
                .map_err(|e| e.to_string())?;
            let report = evaluate(
                std::slice::from_ref(&gt),
                std::slice::from_ref(&out),
                ApInterpolation::AllPoints,
                None,
            )
            .map_err(|e| e.to_string())?;
            scores[slot] = report.score1;
        }
        let (fused_s1, naive_s1) = (scores[0], scores[1]);
        if fused_s1 <= naive_s1 {
            return Err(format!(
                "scene {i}: fused Score1 {fused_s1:.3} not strictly above baseline {naive_s1:.3}"
            ));
        }
        min_delta = min_delta.min(fused_s1 - naive_s1);
    }
    Ok(format!(
        "fused beat keep-everything on all 10 scenes (min gain {min_delta:.2} Score1 points)"
    ))
}

// -------------------------------------------------------------------------
// Criterion 4: ap50 equals the brute-force reference within 1e-9 on 500
// randomized micro-scenes (<= 8 ground truths, <= 10 predictions).
// -------------------------------------------------------------------------
fn rect_instance(id: u64, x: u32, y: u32, w: u32, h: u32, score: f64) -> GlobalInstance<f64> {
    let mut g = BitGrid::new(w, h);
    for yy in 0..h {
        for xx in 0..w {
            g.set(xx, yy, true);
        }
    }
    GlobalInstance {
        instance_id: id,
        bbox: BBox::new(x as f64, y as f64, w as f64, h as f64),
        score,
        category: 1,
        origin_x: x,
        origin_y: y,
        mask: RleMask::encode(&g),
    }
}

fn micro_scene(seed: u64) -> (Vec<InstanceSet<f64>>, Vec<InstanceSet<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (48u32, 40u32);
    let n_gt = rng.random_range(1..=8u32);
    let mut gt = Vec::new();
    for i in 0..n_gt {
        let gw = rng.random_range(3..=12u32);
        let gh = rng.random_range(3..=12u32);
        gt.push(rect_instance(
            i as u64 + 1,
            rng.random_range(0..=w - gw),
            rng.random_range(0..=h - gh),
            gw,
            gh,
            1.0,
        ));
    }
    let mut preds = Vec::new();
    for inst in &gt {
        if preds.len() < 10 && rng.random_bool(0.75) {
            let dx = rng.random_range(-3i64..=3);
            let dy = rng.random_range(-3i64..=3);
            let x = (inst.origin_x as i64 + dx).clamp(0, w as i64 - 2) as u32;
            let y = (inst.origin_y as i64 + dy).clamp(0, h as i64 - 2) as u32;
            let pw = (inst.mask.width() as i64 + rng.random_range(-2i64..=2))
                .clamp(1, (w - x) as i64) as u32;
            let ph = (inst.mask.height() as i64 + rng.random_range(-2i64..=2))
                .clamp(1, (h - y) as i64) as u32;
            preds.push(rect_instance(
                preds.len() as u64 + 1,
                x,
                y,
                pw,
                ph,
                rng.random_range(0.05..1.0),
            ));
        }
    }
    for _ in 0..rng.random_range(0..=3u32) {
        if preds.len() >= 10 {
            break;
        }
        let pw = rng.random_range(2..=10u32);
        let ph = rng.random_range(2..=10u32);
        preds.push(rect_instance(
            preds.len() as u64 + 1,
            rng.random_range(0..=w - pw),
            rng.random_range(0..=h - ph),
            pw,
            ph,
            rng.random_range(0.05..1.0),
        ));
    }
    let mk = |instances| {
        vec![InstanceSet {
            image_id: "micro".to_string(),
            width: w,
            height: h,
            instances,
        }]
    };
    (mk(gt), mk(preds))
}

fn c4_ap_oracle() -> CritResult {
    let mut worst = 0.0f64;
    for seed in 10_000..10_500u64 {
        let (gt, pred) = micro_scene(seed);
        let fast = ap50(&gt, &pred, ApInterpolation::AllPoints)
            .map_err(|e| format!("seed {seed}: {e}"))?
            .ap50;
        let reference = naive::ap50_reference(&gt, &pred);
        let diff = (fast - reference).abs();
        worst = worst.max(diff);
        if diff >= 1e-9 {
            return Err(format!(
                "seed {seed}: ap50 {fast} vs reference {reference} (|diff| = {diff:e})"
            ));
        }
    }
    Ok(format!("500 micro-scenes agree (worst |diff| {worst:.2e})"))
}

// -------------------------------------------------------------------------
// Criterion 5: Score1 reproduces both published pairings with back-solved
// mIoU values, within 1e-9.
// -------------------------------------------------------------------------
fn c5_formula_consistency() -> CritResult {
    let a = score1::<f64>(58.1, 71.3).map_err(|e| e.to_string())?;
    if (a - 63.38).abs() >= 1e-9 {
        return Err(format!("score1(58.1, 71.3) = {a}, expected 63.38"));
    }
    let back_solved: f64 = (62.88 - 0.6 * 55.7) / 0.4;
    if (back_solved - 73.65).abs() >= 1e-9 {
        return Err(format!("back-solve gave {back_solved}, expected 73.65"));
    }
    let b = score1::<f64>(55.7, back_solved).map_err(|e| e.to_string())?;
    if (b - 62.88).abs() >= 1e-9 {
        return Err(format!("score1(55.7, {back_solved}) = {b}, expected 62.88"));
    }
    Ok("both table pairings reproduced within 1e-9".into())
}

// -------------------------------------------------------------------------
// Criterion 6: 10 000 random masks up to 257x253 survive encode/decode
// with foreground counts preserved. < 10 s.
// -------------------------------------------------------------------------
fn c6_rle_roundtrip() -> CritResult {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..10_000u32 {
        let w = rng.random_range(1..=257u32);
        let h = rng.random_range(1..=253u32);
        let density = match case % 5 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..1.0),
        };
        let mut grid = BitGrid::new(w, h);
        let mut ones = 0u64;
        for y in 0..h {
            for x in 0..w {
                if rng.random_bool(density) {
                    grid.set(x, y, true);
                    ones += 1;
                }
            }
        }
        let mask = RleMask::encode(&grid);
        if mask.area() != ones {
            return Err(format!("case {case}: area {} vs {} painted", mask.area(), ones));
        }
        if mask.decode() != grid {
            return Err(format!("case {case}: decode(encode(grid)) != grid ({w}x{h})"));
        }
    }
    Ok("10000 masks round-tripped with areas preserved".into())
}

// -------------------------------------------------------------------------
// Criterion 7: Soft-NMS closed forms: Gaussian sigma=0.5 identical-box
// decay factor e^-2 and linear decay factor (1 - iou), both within 1e-12;
// disjoint boxes unchanged.
// -------------------------------------------------------------------------
fn det_with_box(x: f64, y: f64, w: f64, h: f64, score: f64) -> Detection<f64> {
    let mut g = BitGrid::new(64, 64);
    for yy in y as u32..(y + h) as u32 {
        for xx in x as u32..(x + w) as u32 {
            g.set(xx, yy, true);
        }
    }
    Detection {
        tile_id: "t".to_string(),
        bbox: BBox::new(x, y, w, h),
        score,
        category: 1,
        mask: RleMask::encode(&g),
    }
}

fn c7_softnms_closed_form() -> CritResult {
    // Identical boxes, Gaussian sigma = 0.5: factor e^(-1/0.5).
    let dets = vec![
        det_with_box(2.0, 2.0, 8.0, 8.0, 0.9),
        det_with_box(2.0, 2.0, 8.0, 8.0, 0.8),
    ];
    let out = soft_nms(&dets, &SoftNmsParams::gaussian(0.5, 0.0)).map_err(|e| e.to_string())?;
    let factor = out[1].score / 0.8;
    let expected = (-2.0f64).exp();
    if (factor - expected).abs() >= 1e-12 {
        return Err(format!("gaussian factor {factor} vs e^-2 {expected}"));
    }

    // iou 0.5 boxes, linear Nt = 0.3: factor 1 - 0.5.
    let dets = vec![
        det_with_box(0.0, 0.0, 4.0, 4.0, 0.9),
        det_with_box(0.0, 0.0, 2.0, 4.0, 0.8),
    ];
    let out = soft_nms(&dets, &SoftNmsParams::linear(0.3, 0.0)).map_err(|e| e.to_string())?;
    let factor = out[1].score / 0.8;
    if (factor - 0.5).abs() >= 1e-12 {
        return Err(format!("linear factor {factor} vs 0.5"));
    }

    // Disjoint boxes are untouched by either method.
    let dets = vec![
        det_with_box(0.0, 0.0, 4.0, 4.0, 0.9),
        det_with_box(20.0, 20.0, 4.0, 4.0, 0.8),
    ];
    for params in [SoftNmsParams::gaussian(0.5, 0.0), SoftNmsParams::linear(0.3, 0.0)] {
        let out = soft_nms(&dets, &params).map_err(|e| e.to_string())?;
        if out[0].score != 0.9 || out[1].score != 0.8 {
            return Err("disjoint boxes must keep exact scores".into());
        }
    }
    Ok("decay factors exact to 1e-12; disjoint untouched".into())
}

// -------------------------------------------------------------------------
// Criterion 8: the full pipeline on one 10000x10000 synthetic scene
// (tiling + simulated detection + fusion + eval) finishes in < 60 s with
// the stage-timing report emitted.
// -------------------------------------------------------------------------
fn c8_throughput() -> CritResult {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = SceneConfig {
        width: 10_000,
        height: 10_000,
        n_objects: 1200,
        size_min: 40,
        size_max: 220,
        shape: ShapeKind::ConvexPolygon,
        min_gap: 2,
        seed: 88,
    };
    let (raster, gt) = generate_scene::<f64>(&scene).map_err(|e| e.to_string())?;
    let raster_path = dir.path().join("scene.bsq");
    tilefuse_core::raster::save_raster(&raster, &raster_path).map_err(|e| e.to_string())?;
    drop(raster);
    let gt_path = dir.path().join("gt.json");
    write_annotations(&gt_path, std::slice::from_ref(&gt)).map_err(|e| e.to_string())?;

    let out = dir.path().join("out");
    let cfg = PipelineConfig {
        input: Some(raster_path),
        gt: Some(gt_path),
        simulate: true,
        out: Some(out.clone()),
        ..PipelineConfig::default()
    };
    let started = Instant::now();
    let report = run_pipeline(&cfg).map_err(|e| format!("{e:#}"))?;
    let wall = started.elapsed().as_secs_f64();

    if wall >= 60.0 {
        return Err(format!("pipeline took {wall:.1} s (budget 60 s)"));
    }
    if !out.join("report.json").exists() {
        return Err("report.json missing".into());
    }
    let t = report.timings;
    let sum = t.tile_ms + t.detect_ms + t.fuse_ms + t.eval_ms;
    if (sum - t.total_ms).abs() > 0.05 * t.total_ms {
        return Err(format!("stage sum {sum:.1} ms vs total {:.1} ms", t.total_ms));
    }
    if report.eval.score1 != 100.0 {
        return Err(format!("perfect 10k scene should score 100, got {}", report.eval.score1));
    }
    Ok(format!(
        "{} tiles, {} instances in {wall:.1} s (tile {:.0} ms, detect {:.0} ms, fuse {:.0} ms, eval {:.0} ms)",
        report.tiles, report.fused_instances, t.tile_ms, t.detect_ms, t.fuse_ms, t.eval_ms
    ))
}

// -------------------------------------------------------------------------
// Criterion 9: the criterion-2 and criterion-3 pipelines re-run with
// --threads 1 and --threads 8 produce byte-identical fused annotation
// files (and detection files).
// -------------------------------------------------------------------------
fn run_scene_pipeline(
    dir: &Path,
    gt: &InstanceSet<f64>,
    noise: Option<&NoiseConfig<f64>>,
    threads: usize,
) -> Result<(Vec<u8>, Vec<u8>), String> {
    let gt_path = dir.join("gt.json");
    if !gt_path.exists() {
        write_annotations(&gt_path, std::slice::from_ref(gt)).map_err(|e| e.to_string())?;
    }
    let noise_path = dir.join("noise.json");
    let mut cfg = PipelineConfig {
        gt: Some(gt_path),
        simulate: true,
        out: Some(dir.join(format!("out_t{threads}"))),
        threads: Some(threads),
        ..PipelineConfig::default()
    };
    if let Some(noise) = noise {
        if !noise_path.exists() {
            std::fs::write(&noise_path, serde_json::to_string(noise).unwrap())
                .map_err(|e| e.to_string())?;
        }
        cfg.noise = Some(noise_path);
        cfg.soft_nms = Some(tilefuse::pipeline::NmsChoice::Gaussian);
    }
    run_pipeline(&cfg).map_err(|e| format!("{e:#}"))?;
    let out = cfg.out.unwrap();
    let fused = std::fs::read(out.join("fused.json")).map_err(|e| e.to_string())?;
    let dets = std::fs::read(out.join("dets.jsonl")).map_err(|e| e.to_string())?;
    Ok((fused, dets))
}

fn c9_determinism() -> CritResult {
    let mut scenes: Vec<(SceneConfig, Option<NoiseConfig<f64>>)> = Vec::new();
    for seed in 1..=20u64 {
        scenes.push((c2_scene(seed), None));
    }
    for i in 0..10u64 {
        scenes.push((c2_scene(100 + i), Some(c3_noise(200 + i))));
    }

    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (idx, (scene, noise)) in scenes.iter().enumerate() {
        let (_, gt) = generate_scene::<f64>(scene).map_err(|e| e.to_string())?;
        let dir = root.path().join(format!("scene_{idx}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let (fused_1, dets_1) = run_scene_pipeline(&dir, &gt, noise.as_ref(), 1)?;
        let (fused_8, dets_8) = run_scene_pipeline(&dir, &gt, noise.as_ref(), 8)?;
        if fused_1 != fused_8 {
            return Err(format!("scene {idx}: fused.json differs between thread counts"));
        }
        if dets_1 != dets_8 {
            return Err(format!("scene {idx}: dets.jsonl differs between thread counts"));
        }
    }

    // Exercise the actual --threads flag through the binary on one perfect
    // and one noisy scene.
    for (idx, (scene, noise)) in [(0usize, (c2_scene(1), None)), (1, (c2_scene(100), Some(c3_noise(200))))] {
        let dir = root.path().join(format!("bin_{idx}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let (_, gt) = generate_scene::<f64>(&scene).map_err(|e| e.to_string())?;
        write_annotations(dir.join("gt.json"), std::slice::from_ref(&gt))
            .map_err(|e| e.to_string())?;
        if let Some(noise) = &noise {
            std::fs::write(dir.join("noise.json"), serde_json::to_string(noise).unwrap())
                .map_err(|e| e.to_string())?;
        }
        let mut outputs = Vec::new();
        for threads in ["1", "8"] {
            let out = dir.join(format!("out_{threads}"));
            let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_tilefuse"));
            cmd.args(["pipeline", "--threads", threads, "--simulate"])
                .arg("--gt")
                .arg(dir.join("gt.json"))
                .arg("--out")
                .arg(&out);
            if noise.is_some() {
                cmd.arg("--noise").arg(dir.join("noise.json"));
                cmd.args(["--soft-nms", "gaussian"]);
            }
            let status = cmd.output().map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!(
                    "binary pipeline failed: {}",
                    String::from_utf8_lossy(&status.stderr)
                ));
            }
            outputs.push(std::fs::read(out.join("fused.json")).map_err(|e| e.to_string())?);
        }
        if outputs[0] != outputs[1] {
            return Err(format!("binary scene {idx}: fused.json differs between --threads 1 and 8"));
        }
    }
    Ok("30 scenes and 2 binary runs byte-identical across thread counts".into())
}
