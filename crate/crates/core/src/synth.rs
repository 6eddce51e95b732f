//! Seeded synthetic scenes and a configurable simulated detector.
//!
//! Scenes are fields of pairwise non-overlapping filled shapes (rejection
//! sampled with a minimum gap) rendered into a 3-band raster, with exact
//! masks and tight boxes as ground truth. The simulated detector clips
//! ground truth to each tile, because a per-tile model cannot see outside
//! its input; objects straddling tile borders therefore yield truncated
//! fragments and cross-tile duplicates, which is what fusion has to
//! resolve.
//! With all noise zeroed it is the *perfect detector*: exact clipped ground
//! truth at score 1.0, the correctness oracle for the whole pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{clip_to_tile, BBox, BitGrid, Detection, GlobalInstance, InstanceSet, RleMask};
use crate::raster::RasterImage;
use crate::scalar::Scalar;
use crate::tiling::{Rect, Tile, TileManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    ConvexPolygon,
}

/// Synthetic scene parameters; fully deterministic for a fixed seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub n_objects: u32,
    pub size_min: u32,
    pub size_max: u32,
    pub shape: ShapeKind,
    pub min_gap: u32,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParams("scene dimensions must be >= 1".into()));
        }
        if self.size_min == 0 || self.size_min > self.size_max {
            return Err(Error::InvalidParams(format!(
                "bad size range {}..{}",
                self.size_min, self.size_max
            )));
        }
        if self.size_max > self.width.min(self.height) {
            return Err(Error::InvalidParams(format!(
                "max side {} exceeds scene extent {}x{}",
                self.size_max, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Beta(alpha, beta) confidence law for simulated true detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreLaw<S = f64> {
    pub alpha: S,
    pub beta: S,
}

/// Detector imperfections, applied per tile with a tile-derived sub-seed so
/// parallel simulation is schedule-independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig<S = f64> {
    /// Probability of missing a visible object, per tile.
    pub p_drop: S,
    /// Max uniform perturbation of each box corner, in pixels.
    pub bbox_jitter: S,
    /// Confidence law for true detections; absent means score 1.0.
    #[serde(default = "none_law")]
    pub score_law: Option<ScoreLaw<S>>,
    /// Expected spurious detections per tile (Poisson).
    pub p_spurious: S,
    pub seed: u64,
}

fn none_law<S>() -> Option<ScoreLaw<S>> {
    None
}

impl<S: Scalar> NoiseConfig<S> {
    /// All noise zeroed: exact clipped ground truth at score 1.0.
    pub fn perfect() -> Self {
        NoiseConfig {
            p_drop: S::zero(),
            bbox_jitter: S::zero(),
            score_law: None,
            p_spurious: S::zero(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: S| v >= S::zero() && v <= S::one();
        if !unit(self.p_drop) {
            return Err(Error::InvalidParams(format!("p_drop {} outside [0, 1]", self.p_drop)));
        }
        if self.bbox_jitter < S::zero() || self.p_spurious < S::zero() {
            return Err(Error::InvalidParams(
                "bbox_jitter and p_spurious must be >= 0".into(),
            ));
        }
        if let Some(law) = &self.score_law {
            if law.alpha <= S::zero() || law.beta <= S::zero() {
                return Err(Error::InvalidParams("score law parameters must be > 0".into()));
            }
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn tile_seed(base: u64, row: u32, col: u32) -> u64 {
    splitmix64(splitmix64(base) ^ ((row as u64) << 32 | col as u64))
}

/// Distinct per-object fill color; the multiplier is odd, so index -> color
/// is a bijection on 24 bits.
fn object_color(index: u32) -> [u8; 3] {
    let c = (index + 1).wrapping_mul(2_654_435_761) & 0x00FF_FFFF;
    [(c >> 16) as u8, (c >> 8) as u8, c as u8]
}

const BACKGROUND: u8 = 16;
const PLACEMENT_ATTEMPTS: u32 = 1000;

/// Rasterize a convex polygon inscribed in a `w x h` box: vertices sit on
/// the inscribed ellipse at jittered, evenly spread angles (convex and
/// center-containing by construction); one span per row.
fn rasterize_polygon(rng: &mut ChaCha8Rng, w: u32, h: u32) -> BitGrid {
    let k = rng.random_range(5..=9usize);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut verts = Vec::with_capacity(k);
    for i in 0..k {
        let slot = std::f64::consts::TAU / k as f64;
        let theta = i as f64 * slot + rng.random_range(0.0..slot);
        verts.push((cx + rx * theta.cos(), cy + ry * theta.sin()));
    }

    let mut grid = BitGrid::new(w, h);
    for y in 0..h {
        let yc = y as f64 + 0.5;
        // Intersect the scanline with every edge; convexity gives one span.
        let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..k {
            let (x1, y1) = verts[i];
            let (x2, y2) = verts[(i + 1) % k];
            if (y1 - yc) * (y2 - yc) <= 0.0 && y1 != y2 {
                let t = (yc - y1) / (y2 - y1);
                let x = x1 + t * (x2 - x1);
                x_lo = x_lo.min(x);
                x_hi = x_hi.max(x);
            }
        }
        if x_lo > x_hi {
            continue;
        }
        let start = (x_lo - 0.5).ceil().max(0.0) as u32;
        let end = ((x_hi - 0.5).floor().min(w as f64 - 1.0)) as i64;
        for x in start as i64..=end {
            grid.set(x as u32, y, true);
        }
    }
    if grid.count_ones() == 0 {
        grid.set(w / 2, h / 2, true);
    }
    grid
}

/// Generate a scene: non-overlapping filled shapes at least `min_gap`
/// apart, rendered into a 3-band raster with a distinct mean intensity per
/// object; ground truth carries exact masks and tight boxes.
pub fn generate_scene<S: Scalar>(cfg: &SceneConfig) -> Result<(RasterImage, InstanceSet<S>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width, cfg.height);

    let mut placed: Vec<Rect> = Vec::with_capacity(cfg.n_objects as usize);
    let mut instances: Vec<GlobalInstance<S>> = Vec::with_capacity(cfg.n_objects as usize);
    let mut pixels = vec![BACKGROUND; w as usize * h as usize * 3];

    for i in 0..cfg.n_objects {
        let mut accepted = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let ow = rng.random_range(cfg.size_min..=cfg.size_max);
            let oh = rng.random_range(cfg.size_min..=cfg.size_max);
            let x = rng.random_range(0..=w - ow);
            let y = rng.random_range(0..=h - oh);
            let candidate = Rect::new(x, y, ow, oh);
            let grown = Rect::new(
                x.saturating_sub(cfg.min_gap),
                y.saturating_sub(cfg.min_gap),
                ow + 2 * cfg.min_gap,
                oh + 2 * cfg.min_gap,
            );
            if placed.iter().all(|r| grown.intersect(r).is_none()) {
                accepted = Some(candidate);
                break;
            }
        }
        let rect = accepted.ok_or_else(|| {
            Error::InvalidParams(format!(
                "could not place object {} of {} after {PLACEMENT_ATTEMPTS} attempts; \
                 the scene is too dense",
                i + 1,
                cfg.n_objects
            ))
        })?;
        placed.push(rect);

        let grid = match cfg.shape {
            ShapeKind::Rectangle => {
                let mut g = BitGrid::new(rect.w, rect.h);
                for y in 0..rect.h {
                    for x in 0..rect.w {
                        g.set(x, y, true);
                    }
                }
                g
            }
            ShapeKind::ConvexPolygon => rasterize_polygon(&mut rng, rect.w, rect.h),
        };
        let mask = RleMask::encode(&grid);
        let tight = mask.tight_bbox().expect("generated masks are non-empty");
        let mask = mask.crop(&tight).expect("tight bbox fits");
        let (ox, oy) = (rect.x + tight.x, rect.y + tight.y);

        let color = object_color(i);
        for span in mask.spans() {
            let gx = (ox + span.x) as usize;
            for gy in (oy + span.y0)..(oy + span.y1) {
                let base = (gy as usize * w as usize + gx) * 3;
                pixels[base] = color[0];
                pixels[base + 1] = color[1];
                pixels[base + 2] = color[2];
            }
        }

        instances.push(GlobalInstance {
            instance_id: i as u64 + 1,
            bbox: BBox::new(
                S::from_count(ox as u64),
                S::from_count(oy as u64),
                S::from_count(mask.width() as u64),
                S::from_count(mask.height() as u64),
            ),
            score: S::one(),
            category: 1,
            origin_x: ox,
            origin_y: oy,
            mask,
        });
    }

    let raster = RasterImage::new_u8(w, h, 3, pixels)?;
    let gt = InstanceSet {
        image_id: format!("scene_{}", cfg.seed),
        width: w,
        height: h,
        instances,
    };
    gt.validate()?;
    Ok((raster, gt))
}

fn sample_beta(rng: &mut ChaCha8Rng, alpha: f64, beta: f64) -> f64 {
    let dist = rand_distr::Beta::new(alpha, beta).expect("validated law parameters");
    dist.sample(rng).clamp(0.0, 1.0)
}

/// Simulate one tile's detector output from global ground truth.
///
/// Every ground-truth object with foreground inside the tile is clipped to
/// the tile extent, then run through drop/jitter/score noise; spurious
/// detections are Poisson-sampled rectangles. The RNG stream is derived
/// from (noise.seed, tile.row, tile.col), so any tile schedule produces
/// identical output.
pub fn simulate_detector<S: Scalar>(
    gt: &InstanceSet<S>,
    tile: &Tile,
    tile_id: &str,
    noise: &NoiseConfig<S>,
) -> Vec<Detection<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(tile_seed(noise.seed, tile.row, tile.col));
    let p_drop = noise.p_drop.as_f64();
    let jitter = noise.bbox_jitter.as_f64();
    let mut out = Vec::new();

    for inst in &gt.instances {
        let Some(mut det) = clip_to_tile(inst, tile, tile_id) else {
            continue;
        };
        if p_drop > 0.0 && rng.random_bool(p_drop.min(1.0)) {
            continue;
        }
        if jitter > 0.0 {
            det.bbox = jitter_bbox(&mut rng, &det.bbox, jitter, tile.width, tile.height);
        }
        if let Some(law) = &noise.score_law {
            det.score = S::real(sample_beta(&mut rng, law.alpha.as_f64(), law.beta.as_f64()));
        }
        out.push(det);
    }

    let lambda = noise.p_spurious.as_f64();
    if lambda > 0.0 {
        let n_spurious = rand_distr::Poisson::new(lambda)
            .expect("validated p_spurious")
            .sample(&mut rng) as u32;
        for _ in 0..n_spurious {
            out.push(spurious_detection(&mut rng, tile, tile_id, noise));
        }
    }
    out
}

fn jitter_bbox<S: Scalar>(
    rng: &mut ChaCha8Rng,
    bbox: &BBox<S>,
    jitter: f64,
    tile_w: u32,
    tile_h: u32,
) -> BBox<S> {
    const MIN_EXTENT: f64 = 0.5;
    let (tw, th) = (tile_w as f64, tile_h as f64);
    let mut draw = || rng.random_range(-jitter..=jitter);
    let x0 = (bbox.x.as_f64() + draw()).clamp(0.0, tw - MIN_EXTENT);
    let y0 = (bbox.y.as_f64() + draw()).clamp(0.0, th - MIN_EXTENT);
    let x1 = (bbox.right().as_f64() + draw()).clamp(x0 + MIN_EXTENT, tw);
    let y1 = (bbox.bottom().as_f64() + draw()).clamp(y0 + MIN_EXTENT, th);
    BBox::new(
        S::real(x0),
        S::real(y0),
        S::real(x1 - x0),
        S::real(y1 - y0),
    )
}

fn spurious_detection<S: Scalar>(
    rng: &mut ChaCha8Rng,
    tile: &Tile,
    tile_id: &str,
    noise: &NoiseConfig<S>,
) -> Detection<S> {
    let sw = rng.random_range(4..=40.min(tile.width.max(4))).min(tile.width);
    let sh = rng.random_range(4..=40.min(tile.height.max(4))).min(tile.height);
    let sx = rng.random_range(0..=tile.width - sw);
    let sy = rng.random_range(0..=tile.height - sh);
    // Spurious confidences draw from the reversed law (low-scoring clutter);
    // without a law they sit at 0.5.
    let score = match &noise.score_law {
        Some(law) => sample_beta(rng, law.beta.as_f64(), law.alpha.as_f64()),
        None => 0.5,
    };
    let rect = Rect::new(sx, sy, sw, sh);
    let mut grid = BitGrid::new(tile.width, tile.height);
    for y in rect.y..rect.bottom() {
        for x in rect.x..rect.right() {
            grid.set(x, y, true);
        }
    }
    Detection {
        tile_id: tile_id.to_string(),
        bbox: BBox::from_rect(&rect),
        score: S::real(score),
        category: 1,
        mask: RleMask::encode(&grid),
    }
}

/// Run the simulated detector over every manifest tile (in parallel) and
/// return the detections flattened in manifest order.
pub fn simulate_over_manifest<S: Scalar>(
    gt: &InstanceSet<S>,
    manifest: &TileManifest,
    noise: &NoiseConfig<S>,
) -> Result<Vec<Detection<S>>> {
    noise.validate()?;
    let per_tile: Vec<Vec<Detection<S>>> = manifest
        .tiles
        .par_iter()
        .map(|entry| simulate_detector(gt, &entry.to_tile(), &entry.tile_id, noise))
        .collect();
    Ok(per_tile.into_iter().flatten().collect())
}
