//! Sliding-window tile grids with border clipping, per-tile target areas,
//! tile extraction, and tiled dataset export.
//!
//! A grid is computed per axis: windows of size `window` advance by `stride`
//! from the top-left; the last window is clipped at the image border, never
//! re-anchored. Each tile carries a *target* rectangle; the global
//! projections of all target rectangles partition the image exactly, which
//! is what makes fusion duplicate-free. Interior tiles target
//! `[margin, margin + stride)` per axis; the strip merges into the target on
//! image borders.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{clip_to_tile, write_detections, Detection, InstanceSet};
use crate::raster::{save_raster, RasterImage, Samples};
use crate::scalar::Scalar;

/// Sliding-window parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridParams {
    pub window: u32,
    pub stride: u32,
    pub margin: u32,
}

impl GridParams {
    pub fn new(window: u32, stride: u32, margin: u32) -> Result<Self> {
        let p = GridParams {
            window,
            stride,
            margin,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::InvalidParams(
                "window and stride must be >= 1".into(),
            ));
        }
        if self.stride > self.window {
            return Err(Error::InvalidParams(format!(
                "stride {} exceeds window {}",
                self.stride, self.window
            )));
        }
        if self.margin + self.stride > self.window {
            return Err(Error::InvalidParams(format!(
                "margin {} + stride {} exceeds window {}",
                self.margin, self.stride, self.window
            )));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x = self.x.max(other.x);
        let y = self.y.max(other.y);
        let r = self.right().min(other.right());
        let b = self.bottom().min(other.bottom());
        if x < r && y < b {
            Some(Rect::new(x, y, r - x, b - y))
        } else {
            None
        }
    }
}

/// One window of the grid, with its clipped size and tile-local target rect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub row: u32,
    pub col: u32,
    pub origin_x: u32,
    pub origin_y: u32,
    pub width: u32,
    pub height: u32,
    pub target: Rect,
}

impl Tile {
    pub fn id(&self, image_id: &str) -> String {
        format!("{image_id}_{}_{}", self.row, self.col)
    }

    /// Tile extent in global coordinates.
    pub fn extent(&self) -> Rect {
        Rect::new(self.origin_x, self.origin_y, self.width, self.height)
    }

    /// Target rectangle in global coordinates.
    pub fn target_global(&self) -> Rect {
        Rect::new(
            self.origin_x + self.target.x,
            self.origin_y + self.target.y,
            self.target.w,
            self.target.h,
        )
    }
}

/// Row-major sliding-window decomposition of one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub image_width: u32,
    pub image_height: u32,
    pub params: GridParams,
    pub rows: u32,
    pub cols: u32,
    pub tiles: Vec<Tile>,
}

fn axis_tile_count(length: u32, window: u32, stride: u32) -> u32 {
    if length <= window {
        1
    } else {
        (length - window).div_ceil(stride) + 1
    }
}

/// Tile-local half-open target interval for tile `k` of `n` on one axis.
///
/// Interior tiles target `[margin, margin + stride)`. On the image border
/// the adjacent strip merges into the target: the first tile starts at 0,
/// the last runs to the clipped tile size. A tile's target rectangle is
/// this interval applied independently per axis.
pub fn compute_target_interval(k: u32, n: u32, tile_size: u32, params: &GridParams) -> (u32, u32) {
    let m = params.margin;
    let s = params.stride;
    match (k == 0, k == n - 1) {
        (true, true) => (0, tile_size),
        (true, false) => (0, m + s),
        (false, true) => (m, tile_size),
        (false, false) => (m, m + s),
    }
}

/// Compute the sliding-window grid for an image, top-to-bottom and
/// left-to-right, with clipped border tiles and per-tile target rects.
pub fn compute_tile_grid(image_width: u32, image_height: u32, params: GridParams) -> Result<TileGrid> {
    params.validate()?;
    if image_width == 0 || image_height == 0 {
        return Err(Error::InvalidParams(
            "image dimensions must be >= 1".into(),
        ));
    }

    let cols = axis_tile_count(image_width, params.window, params.stride);
    let rows = axis_tile_count(image_height, params.window, params.stride);

    let mut tiles = Vec::with_capacity(rows as usize * cols as usize);
    for row in 0..rows {
        let origin_y = row * params.stride;
        let height = params.window.min(image_height - origin_y);
        let (ty0, ty1) = compute_target_interval(row, rows, height, &params);
        for col in 0..cols {
            let origin_x = col * params.stride;
            let width = params.window.min(image_width - origin_x);
            let (tx0, tx1) = compute_target_interval(col, cols, width, &params);
            debug_assert!(width >= 1 && height >= 1);
            // Clipped border tiles always retain more than window - stride
            // pixels, so the target interval is never empty.
            debug_assert!(cols == 1 || width > params.window - params.stride);
            debug_assert!(rows == 1 || height > params.window - params.stride);
            tiles.push(Tile {
                row,
                col,
                origin_x,
                origin_y,
                width,
                height,
                target: Rect::new(tx0, ty0, tx1 - tx0, ty1 - ty0),
            });
        }
    }

    Ok(TileGrid {
        image_width,
        image_height,
        params,
        rows,
        cols,
        tiles,
    })
}

/// Crop one tile out of the image; samples are copied exactly.
pub fn extract_tile(image: &RasterImage, tile: &Tile) -> Result<RasterImage> {
    if tile.origin_x + tile.width > image.width() || tile.origin_y + tile.height > image.height() {
        return Err(Error::InvalidParams(format!(
            "tile ({}, {}) {}x{} exceeds image {}x{}",
            tile.origin_x,
            tile.origin_y,
            tile.width,
            tile.height,
            image.width(),
            image.height()
        )));
    }
    let bands = image.bands() as usize;
    let src_w = image.width() as usize;
    let (tw, th) = (tile.width as usize, tile.height as usize);
    let (ox, oy) = (tile.origin_x as usize, tile.origin_y as usize);

    fn crop_rows<T: Copy>(
        src: &[T],
        src_w: usize,
        bands: usize,
        ox: usize,
        oy: usize,
        tw: usize,
        th: usize,
    ) -> Vec<T> {
        let mut out = Vec::with_capacity(tw * th * bands);
        for y in 0..th {
            let start = ((oy + y) * src_w + ox) * bands;
            out.extend_from_slice(&src[start..start + tw * bands]);
        }
        out
    }

    let samples = match image.samples() {
        Samples::U8(v) => Samples::U8(crop_rows(v, src_w, bands, ox, oy, tw, th)),
        Samples::U16(v) => Samples::U16(crop_rows(v, src_w, bands, ox, oy, tw, th)),
    };
    RasterImage::new(tile.width, tile.height, image.bands(), samples)
}

/// One manifest entry, mirroring the `tiles.json` schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileEntry {
    pub tile_id: String,
    pub row: u32,
    pub col: u32,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub target: Rect,
}

impl TileEntry {
    pub fn from_tile(tile: &Tile, image_id: &str) -> Self {
        TileEntry {
            tile_id: tile.id(image_id),
            row: tile.row,
            col: tile.col,
            x: tile.origin_x,
            y: tile.origin_y,
            w: tile.width,
            h: tile.height,
            target: tile.target,
        }
    }

    pub fn to_tile(&self) -> Tile {
        Tile {
            row: self.row,
            col: self.col,
            origin_x: self.x,
            origin_y: self.y,
            width: self.w,
            height: self.h,
            target: self.target,
        }
    }
}

/// The single source of truth for tile positions. Fusion consumes manifests
/// and never re-derives geometry from filenames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileManifest {
    pub image_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub window: u32,
    pub stride: u32,
    pub margin: u32,
    pub tiles: Vec<TileEntry>,
}

impl TileManifest {
    pub fn from_grid(grid: &TileGrid, image_id: &str) -> Self {
        TileManifest {
            image_id: image_id.to_string(),
            image_width: grid.image_width,
            image_height: grid.image_height,
            window: grid.params.window,
            stride: grid.params.stride,
            margin: grid.params.margin,
            tiles: grid
                .tiles
                .iter()
                .map(|t| TileEntry::from_tile(t, image_id))
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(
            path,
            serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
        .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: TileManifest =
            serde_json::from_str(&text).map_err(|e| Error::decode(path, format!("bad manifest: {e}")))?;
        Ok(manifest)
    }

    pub fn entry(&self, tile_id: &str) -> Option<&TileEntry> {
        self.tiles.iter().find(|t| t.tile_id == tile_id)
    }
}

/// Cut an image into tiles on disk, with a manifest and (optionally) the
/// ground truth clipped into tile-local coordinates.
///
/// When `keep_empty` is false and ground truth is present, tiles whose
/// extent contains no ground-truth foreground are skipped entirely: no
/// raster is written and no manifest entry is emitted. Clipped ground truth
/// goes to `gt_tiles.jsonl` in the detections schema.
pub fn export_dataset<S: Scalar + serde::Serialize>(
    image: &RasterImage,
    grid: &TileGrid,
    image_id: &str,
    keep_empty: bool,
    gt: Option<&InstanceSet<S>>,
    out_dir: impl AsRef<Path>,
) -> Result<TileManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ext = if image.bit_depth() == 8 { "png" } else { "bsq" };

    type Exported<S> = Option<(TileEntry, Vec<Detection<S>>)>;
    // Per-tile work is independent; results are collected in row-major
    // order so the manifest is identical to a sequential export.
    let results: Vec<Result<Exported<S>>> = grid
        .tiles
        .par_iter()
        .map(|tile| {
            let tile_id = tile.id(image_id);
            let clipped: Vec<Detection<S>> = match gt {
                Some(set) => set
                    .instances
                    .iter()
                    .filter_map(|inst| clip_to_tile(inst, tile, &tile_id))
                    .collect(),
                None => Vec::new(),
            };
            if !keep_empty && gt.is_some() && clipped.is_empty() {
                return Ok(None);
            }
            let crop = extract_tile(image, tile)?;
            save_raster(&crop, out_dir.join(format!("{tile_id}.{ext}")))?;
            Ok(Some((TileEntry::from_tile(tile, image_id), clipped)))
        })
        .collect();

    let mut entries = Vec::new();
    let mut gt_dets: Vec<Detection<S>> = Vec::new();
    for res in results {
        if let Some((entry, dets)) = res? {
            entries.push(entry);
            gt_dets.extend(dets);
        }
    }

    if gt.is_some() {
        write_detections(out_dir.join("gt_tiles.jsonl"), gt_dets.iter())?;
    }

    let manifest = TileManifest {
        image_id: image_id.to_string(),
        image_width: grid.image_width,
        image_height: grid.image_height,
        window: grid.params.window,
        stride: grid.params.stride,
        margin: grid.params.margin,
        tiles: entries,
    };
    manifest.save(out_dir.join("tiles.json"))?;
    Ok(manifest)
}

/// Seeded shuffle, then split so |train| : |val| is as close as possible to
/// `ratio_train : ratio_val`. Same seed, same split.
pub fn split_dataset(
    ids: &[String],
    ratio_train: u32,
    ratio_val: u32,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if ids.is_empty() {
        return Err(Error::InvalidParams("cannot split an empty id list".into()));
    }
    if ratio_train == 0 || ratio_val == 0 {
        return Err(Error::InvalidParams("ratio counts must be >= 1".into()));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let total = shuffled.len() as u64;
    let denom = (ratio_train + ratio_val) as u64;
    // Round half up.
    let n_train = ((total * ratio_train as u64 * 2 + denom) / (2 * denom)) as usize;
    let n_train = n_train.min(shuffled.len());
    let val = shuffled.split_off(n_train);
    Ok((shuffled, val))
}
