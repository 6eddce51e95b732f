use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tilefuse::pipeline::{
    build_nms_params, run_pipeline, ApInterpChoice, BandsChoice, NmsChoice, PipelineConfig,
    RetentionChoice,
};
use tilefuse_core::fusion::{self, RetentionPolicy};
use tilefuse_core::instances::{self, Detection};
use tilefuse_core::metrics::{self, ApInterpolation, JudgeSubscores};
use tilefuse_core::raster::{self, BandCombo};
use tilefuse_core::synth::{self, NoiseConfig, SceneConfig, ShapeKind};
use tilefuse_core::tiling::{compute_tile_grid, export_dataset, GridParams, TileManifest};
use tilefuse_core::Real;

#[derive(Parser)]
#[command(
    name = "tilefuse",
    about = "Tile large rasters, fuse per-tile instance detections into seamless whole-image maps, and score them",
    version
)]
struct Cli {
    /// Worker threads (default: machine parallelism). Outputs do not depend
    /// on this; only timings do.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic scene: raster plus exact ground truth.
    Synth(SynthArgs),
    /// Cut a raster into sliding-window tiles with a manifest.
    Tile(TileArgs),
    /// Run the simulated detector over a tile manifest.
    DetectSim(DetectSimArgs),
    /// Fuse per-tile detections into a whole-image instance set.
    Fuse(FuseArgs),
    /// Score predictions against ground truth (AP50, mIoU, Score1/2).
    Eval(EvalArgs),
    /// Full pipeline: tile -> detect/ingest -> fuse -> eval, with timings.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Rectangle,
    ConvexPolygon,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandsArg {
    Rgb,
    Nirgb,
}

#[derive(Clone, Copy, ValueEnum)]
enum NmsArg {
    Linear,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum RetentionArg {
    TargetArea,
    KeepAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApInterpArg {
    Allpoints,
    Coco101,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    width: u32,
    #[arg(long, default_value_t = 5000)]
    height: u32,
    #[arg(long, default_value_t = 300)]
    objects: u32,
    /// Object side range as MIN:MAX pixels.
    #[arg(long, default_value = "40:220", value_parser = parse_size_range)]
    sizes: (u32, u32),
    #[arg(long, value_enum, default_value_t = ShapeArg::Rectangle)]
    shape: ShapeArg,
    #[arg(long, default_value_t = 1)]
    min_gap: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory for `<image_id>.bsq` and `gt.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TileArgs {
    /// Input raster (.png or .bsq).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1536)]
    window: u32,
    #[arg(long, default_value_t = 1280)]
    stride: u32,
    #[arg(long, default_value_t = 2)]
    margin: u32,
    /// Band selection; omit to keep all bands.
    #[arg(long, value_enum)]
    bands: Option<BandsArg>,
    /// Keep tiles with no ground-truth overlap (only meaningful with --gt).
    #[arg(long)]
    keep_empty: bool,
    /// Image-level ground truth to clip into tile-local coordinates.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectSimArgs {
    /// Scene directory containing gt.json.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Noise config JSON; omit for the perfect detector.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Overrides the seed in the noise config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output detections file (.jsonl).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    /// Enable Soft-NMS before retention.
    #[arg(long, value_enum)]
    soft_nms: Option<NmsArg>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    iou_thresh: Option<f64>,
    #[arg(long)]
    score_floor: Option<f64>,
    #[arg(long, value_enum, default_value_t = RetentionArg::TargetArea)]
    retention: RetentionArg,
    /// Output fused annotations (.json).
    #[arg(long)]
    out: PathBuf,
    /// Also write the fused label map as a 16-bit planar raster.
    #[arg(long)]
    labelmap: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value_t = ApInterpArg::Allpoints)]
    ap_interp: ApInterpArg,
    /// Where to write the report JSON (also printed to stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Judge-assigned efficiency subscore; with --cod and --doc enables Score2.
    #[arg(long)]
    eff: Option<f64>,
    #[arg(long)]
    cod: Option<f64>,
    #[arg(long)]
    doc: Option<f64>,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    dets: Option<PathBuf>,
    #[arg(long)]
    simulate: bool,
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long)]
    window: Option<u32>,
    #[arg(long)]
    stride: Option<u32>,
    #[arg(long)]
    margin: Option<u32>,
    #[arg(long, value_enum)]
    bands: Option<BandsArg>,
    #[arg(long, value_enum)]
    soft_nms: Option<NmsArg>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    iou_thresh: Option<f64>,
    #[arg(long)]
    score_floor: Option<f64>,
    #[arg(long, value_enum)]
    retention: Option<RetentionArg>,
    #[arg(long, value_enum)]
    ap_interp: Option<ApInterpArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    labelmap: Option<PathBuf>,
    #[arg(long)]
    write_tiles: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eff: Option<f64>,
    #[arg(long)]
    cod: Option<f64>,
    #[arg(long)]
    doc: Option<f64>,
}

fn parse_size_range(s: &str) -> Result<(u32, u32), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected MIN:MAX, got `{s}`"))?;
    let lo: u32 = lo.parse().map_err(|e| format!("bad MIN: {e}"))?;
    let hi: u32 = hi.parse().map_err(|e| format!("bad MAX: {e}"))?;
    if lo == 0 || lo > hi {
        return Err(format!("bad size range {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // The pipeline subcommand builds its own scoped pool; everything
        // else uses the global one.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Tile(args) => cmd_tile(args),
        Command::DetectSim(args) => cmd_detect_sim(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Pipeline(args) => cmd_pipeline(args, cli.threads),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SceneConfig {
        width: args.width,
        height: args.height,
        n_objects: args.objects,
        size_min: args.sizes.0,
        size_max: args.sizes.1,
        shape: match args.shape {
            ShapeArg::Rectangle => ShapeKind::Rectangle,
            ShapeArg::ConvexPolygon => ShapeKind::ConvexPolygon,
        },
        min_gap: args.min_gap,
        seed: args.seed,
    };
    let (image, gt) = synth::generate_scene::<Real>(&cfg)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let raster_path = args.out.join(format!("{}.bsq", gt.image_id));
    raster::save_raster(&image, &raster_path)?;
    let gt_path = args.out.join("gt.json");
    instances::write_annotations(&gt_path, std::slice::from_ref(&gt))?;
    print_json(&json!({
        "image_id": gt.image_id,
        "raster": raster_path,
        "gt": gt_path,
        "objects": gt.instances.len(),
        "width": image.width(),
        "height": image.height(),
    }));
    Ok(())
}

fn cmd_tile(args: TileArgs) -> Result<()> {
    let mut image = raster::load_raster(&args.input)?;
    if let Some(bands) = args.bands {
        let combo = match bands {
            BandsArg::Rgb => BandCombo::Rgb,
            BandsArg::Nirgb => BandCombo::NirGB,
        };
        image = raster::select_bands(&image, &combo)?;
    }
    let gt_sets = match &args.gt {
        Some(path) => instances::parse_annotations::<Real>(path)?,
        None => Vec::new(),
    };
    let image_id = gt_sets
        .first()
        .map(|s| s.image_id.clone())
        .unwrap_or_else(|| {
            args.input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".to_string())
        });

    let params = GridParams::new(args.window, args.stride, args.margin)?;
    let grid = compute_tile_grid(image.width(), image.height(), params)?;
    let manifest = export_dataset(
        &image,
        &grid,
        &image_id,
        args.keep_empty || args.gt.is_none(),
        gt_sets.first(),
        &args.out,
    )?;
    print_json(&json!({
        "image_id": image_id,
        "manifest": args.out.join("tiles.json"),
        "tiles_written": manifest.tiles.len(),
        "grid": { "window": args.window, "stride": args.stride, "margin": args.margin },
    }));
    Ok(())
}

fn cmd_detect_sim(args: DetectSimArgs) -> Result<()> {
    let gt_path = args.scene.join("gt.json");
    let gt_sets = instances::parse_annotations::<Real>(&gt_path)?;
    let manifest = TileManifest::load(&args.manifest)?;
    let gt = gt_sets
        .into_iter()
        .find(|s| s.image_id == manifest.image_id)
        .with_context(|| {
            format!(
                "ground truth {} has no image `{}`",
                gt_path.display(),
                manifest.image_id
            )
        })?;
    let mut noise: NoiseConfig<Real> = match &args.noise {
        Some(path) => serde_json::from_str(
            &std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?,
        )
        .with_context(|| format!("bad noise config {}", path.display()))?,
        None => NoiseConfig::perfect(),
    };
    if let Some(seed) = args.seed {
        noise.seed = seed;
    }
    let dets = synth::simulate_over_manifest(&gt, &manifest, &noise)?;
    instances::write_detections(&args.out, dets.iter())?;
    print_json(&json!({
        "image_id": manifest.image_id,
        "tiles": manifest.tiles.len(),
        "detections": dets.len(),
        "out": args.out,
    }));
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<()> {
    let manifest = TileManifest::load(&args.manifest)?;
    let per_tile: BTreeMap<String, Vec<Detection<Real>>> =
        instances::parse_detections(&args.dets, &manifest)?;
    let nms = args.soft_nms.map(|m| {
        build_nms_params(
            match m {
                NmsArg::Linear => NmsChoice::Linear,
                NmsArg::Gaussian => NmsChoice::Gaussian,
            },
            args.sigma,
            args.iou_thresh,
            args.score_floor,
        )
    });
    let policy = match args.retention {
        RetentionArg::TargetArea => RetentionPolicy::TargetArea,
        RetentionArg::KeepAll => RetentionPolicy::KeepAll,
    };
    let fused = fusion::fuse_with_policy(&per_tile, &manifest, nms.as_ref(), policy)?;
    instances::write_annotations(&args.out, std::slice::from_ref(&fused))?;
    if let Some(lm_path) = &args.labelmap {
        let map = fusion::render_label_map(&fused);
        raster::save_raster(&map.to_raster()?, lm_path)?;
    }
    print_json(&json!({
        "image_id": fused.image_id,
        "fused_instances": fused.instances.len(),
        "out": args.out,
        "labelmap": args.labelmap,
    }));
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let gt = instances::parse_annotations::<Real>(&args.gt)?;
    let pred = instances::parse_annotations::<Real>(&args.pred)?;
    let interp = match args.ap_interp {
        ApInterpArg::Allpoints => ApInterpolation::AllPoints,
        ApInterpArg::Coco101 => ApInterpolation::Coco101,
    };
    let subscores = match (args.eff, args.cod, args.doc) {
        (Some(eff), Some(cod), Some(doc)) => Some(JudgeSubscores { eff, cod, doc }),
        _ => None,
    };
    let report = metrics::evaluate(&gt, &pred, interp, subscores)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(path) = &args.report {
        std::fs::write(path, &text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs, threads: Option<usize>) -> Result<()> {
    let flags = PipelineConfig {
        input: args.input,
        gt: args.gt,
        dets: args.dets,
        simulate: args.simulate,
        noise: args.noise,
        window: args.window,
        stride: args.stride,
        margin: args.margin,
        bands: args.bands.map(|b| match b {
            BandsArg::Rgb => BandsChoice::Rgb,
            BandsArg::Nirgb => BandsChoice::Nirgb,
        }),
        soft_nms: args.soft_nms.map(|m| match m {
            NmsArg::Linear => NmsChoice::Linear,
            NmsArg::Gaussian => NmsChoice::Gaussian,
        }),
        sigma: args.sigma,
        iou_thresh: args.iou_thresh,
        score_floor: args.score_floor,
        retention: args.retention.map(|r| match r {
            RetentionArg::TargetArea => RetentionChoice::TargetArea,
            RetentionArg::KeepAll => RetentionChoice::KeepAll,
        }),
        ap_interp: args.ap_interp.map(|a| match a {
            ApInterpArg::Allpoints => ApInterpChoice::Allpoints,
            ApInterpArg::Coco101 => ApInterpChoice::Coco101,
        }),
        out: args.out,
        labelmap: args.labelmap,
        write_tiles: args.write_tiles,
        seed: args.seed,
        threads,
        eff: args.eff,
        cod: args.cod,
        doc: args.doc,
    };
    let cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?.merged_with(flags),
        None => flags,
    };
    let report = run_pipeline(&cfg)?;
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json prints"));
}
