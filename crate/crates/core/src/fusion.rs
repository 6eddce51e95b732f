//! Overlap-tile fusion: per-tile Soft-NMS, target-area retention,
//! translation to whole-image coordinates, duplicate-free assembly, and
//! label-map compositing.
//!
//! A detection survives fusion iff the top-left corner of its box falls in
//! its tile's target area (half-open on both axes). Because the global
//! target rectangles partition the image, each global corner position can
//! be retained by at most one tile, so the assembled set is duplicate-free
//! by construction. The strategy selects whole detections; it never merges
//! mask fragments across tiles.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{bbox_iou, ColSpan, Detection, GlobalInstance, InstanceSet};
use crate::raster::RasterImage;
use crate::scalar::Scalar;
use crate::tiling::{Rect, TileManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftNmsMethod {
    Linear,
    Gaussian,
}

/// Soft-NMS rescoring parameters.
///
/// Linear decays an overlapping score by `1 - iou` once `iou > iou_threshold`;
/// Gaussian always decays by `exp(-iou^2 / sigma)`. Detections whose final
/// score falls below `score_floor` are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftNmsParams<S = f64> {
    pub method: SoftNmsMethod,
    pub iou_threshold: S,
    pub sigma: S,
    pub score_floor: S,
}

impl<S: Scalar> SoftNmsParams<S> {
    pub fn gaussian(sigma: S, score_floor: S) -> Self {
        SoftNmsParams {
            method: SoftNmsMethod::Gaussian,
            iou_threshold: S::zero(),
            sigma,
            score_floor,
        }
    }

    pub fn linear(iou_threshold: S, score_floor: S) -> Self {
        SoftNmsParams {
            method: SoftNmsMethod::Linear,
            iou_threshold,
            sigma: S::one(),
            score_floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: S| v >= S::zero() && v <= S::one();
        if !unit(self.iou_threshold) {
            return Err(Error::InvalidParams(format!(
                "iou_threshold {} outside [0, 1]",
                self.iou_threshold
            )));
        }
        if !unit(self.score_floor) {
            return Err(Error::InvalidParams(format!(
                "score_floor {} outside [0, 1]",
                self.score_floor
            )));
        }
        if self.method == SoftNmsMethod::Gaussian && self.sigma <= S::zero() {
            return Err(Error::InvalidParams(format!(
                "sigma {} must be > 0",
                self.sigma
            )));
        }
        Ok(())
    }
}

impl Default for SoftNmsParams<f64> {
    fn default() -> Self {
        SoftNmsParams::gaussian(0.5, 0.001)
    }
}

/// Rescore one tile's detections.
///
/// Repeatedly keeps the highest-scoring remaining detection (earliest input
/// position on ties) and decays every other remaining score by overlap with
/// it. After exhaustion, detections below `score_floor` are dropped and the
/// survivors are returned sorted by final score descending, ties in original
/// input order.
pub fn soft_nms<S: Scalar>(
    dets: &[Detection<S>],
    params: &SoftNmsParams<S>,
) -> Result<Vec<Detection<S>>> {
    params.validate()?;
    let mut scores: Vec<S> = dets.iter().map(|d| d.score).collect();
    let mut remaining: Vec<usize> = (0..dets.len()).collect();
    let mut kept: Vec<(usize, S)> = Vec::with_capacity(dets.len());

    while !remaining.is_empty() {
        let mut best_pos = 0;
        for pos in 1..remaining.len() {
            if scores[remaining[pos]] > scores[remaining[best_pos]] {
                best_pos = pos;
            }
        }
        let best = remaining.remove(best_pos);
        kept.push((best, scores[best]));

        for &idx in &remaining {
            let iou = bbox_iou(&dets[best].bbox, &dets[idx].bbox);
            let factor = match params.method {
                SoftNmsMethod::Linear => {
                    if iou > params.iou_threshold {
                        S::one() - iou
                    } else {
                        S::one()
                    }
                }
                SoftNmsMethod::Gaussian => (-(iou * iou) / params.sigma).exp(),
            };
            scores[idx] = scores[idx] * factor;
        }
    }

    kept.retain(|&(_, s)| s >= params.score_floor);
    kept.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    Ok(kept
        .into_iter()
        .map(|(idx, score)| {
            let mut d = dets[idx].clone();
            d.score = score;
            d
        })
        .collect())
}

/// Keep detections whose box top-left corner lies in the (half-open)
/// target rectangle; order is preserved.
pub fn filter_by_target_area<S: Scalar>(dets: &[Detection<S>], target: &Rect) -> Vec<Detection<S>> {
    dets.iter()
        .filter(|d| corner_in_target(&d.bbox.x, &d.bbox.y, target))
        .cloned()
        .collect()
}

fn corner_in_target<S: Scalar>(x: &S, y: &S, target: &Rect) -> bool {
    let tx0 = S::from_count(target.x as u64);
    let ty0 = S::from_count(target.y as u64);
    let tx1 = S::from_count(target.right() as u64);
    let ty1 = S::from_count(target.bottom() as u64);
    *x >= tx0 && *x < tx1 && *y >= ty0 && *y < ty1
}

/// Translate a tile-frame detection into whole-image coordinates. The mask
/// is re-framed to the tight bounding box of its foreground; score and
/// category are preserved. Detections carry non-empty masks by contract.
pub fn translate_to_global<S: Scalar>(
    det: &Detection<S>,
    tile: &crate::tiling::Tile,
    instance_id: u64,
) -> GlobalInstance<S> {
    let tight = det
        .mask
        .tight_bbox()
        .expect("detections carry non-empty masks");
    let mask = det.mask.crop(&tight).expect("tight bbox fits its own mask");
    GlobalInstance {
        instance_id,
        bbox: det.bbox.translate(tile.origin_x, tile.origin_y),
        score: det.score,
        category: det.category,
        origin_x: tile.origin_x + tight.x,
        origin_y: tile.origin_y + tight.y,
        mask,
    }
}

/// Soft-NMS decays scores within one category at a time; detections of
/// different categories never suppress each other.
fn soft_nms_per_category<S: Scalar>(
    dets: &[Detection<S>],
    params: &SoftNmsParams<S>,
) -> Result<Vec<Detection<S>>> {
    let mut categories: Vec<u32> = dets.iter().map(|d| d.category).collect();
    categories.sort_unstable();
    categories.dedup();
    if categories.len() <= 1 {
        return soft_nms(dets, params);
    }
    let mut out = Vec::with_capacity(dets.len());
    for cat in categories {
        let group: Vec<Detection<S>> = dets.iter().filter(|d| d.category == cat).cloned().collect();
        out.extend(soft_nms(&group, params)?);
    }
    Ok(out)
}

/// What the per-tile retention stage keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionPolicy {
    /// The overlap-tile strategy: keep a detection iff its box corner lies
    /// in the tile's target area.
    TargetArea,
    /// Baseline for comparison: keep every detection from every tile.
    KeepAll,
}

/// Fuse per-tile detections into one whole-image instance set using the
/// target-area retention rule. See [`fuse_with_policy`].
pub fn fuse<S: Scalar>(
    per_tile: &BTreeMap<String, Vec<Detection<S>>>,
    manifest: &TileManifest,
    nms: Option<&SoftNmsParams<S>>,
) -> Result<InstanceSet<S>> {
    fuse_with_policy(per_tile, manifest, nms, RetentionPolicy::TargetArea)
}

/// Per tile: optional Soft-NMS, then retention, then translation to global
/// coordinates. Tiles contribute in manifest (row-major) order and instance
/// ids are assigned 1..N in that order, so the output is identical for any
/// parallel schedule.
pub fn fuse_with_policy<S: Scalar>(
    per_tile: &BTreeMap<String, Vec<Detection<S>>>,
    manifest: &TileManifest,
    nms: Option<&SoftNmsParams<S>>,
    policy: RetentionPolicy,
) -> Result<InstanceSet<S>> {
    if let Some(params) = nms {
        params.validate()?;
    }
    for tile_id in per_tile.keys() {
        if manifest.entry(tile_id).is_none() {
            return Err(Error::UnknownTile(tile_id.clone()));
        }
    }

    let per_tile_out: Vec<Result<Vec<GlobalInstance<S>>>> = manifest
        .tiles
        .par_iter()
        .map(|entry| {
            let dets = match per_tile.get(&entry.tile_id) {
                Some(d) => d.as_slice(),
                None => return Ok(Vec::new()),
            };
            let tile = entry.to_tile();
            let rescored;
            let staged: &[Detection<S>] = match nms {
                Some(params) => {
                    rescored = soft_nms_per_category(dets, params)?;
                    &rescored
                }
                None => dets,
            };
            let retained = match policy {
                RetentionPolicy::TargetArea => filter_by_target_area(staged, &tile.target),
                RetentionPolicy::KeepAll => staged.to_vec(),
            };
            Ok(retained
                .iter()
                .map(|d| translate_to_global(d, &tile, 0))
                .collect())
        })
        .collect();

    let mut instances = Vec::new();
    for tile_result in per_tile_out {
        instances.extend(tile_result?);
    }
    for (i, inst) in instances.iter_mut().enumerate() {
        inst.instance_id = i as u64 + 1;
    }

    Ok(InstanceSet {
        image_id: manifest.image_id.clone(),
        width: manifest.image_width,
        height: manifest.image_height,
        instances,
    })
}

/// Whole-image grid of instance ids, 0 for background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn label(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn foreground_pixels(&self) -> u64 {
        self.labels.iter().filter(|&&l| l != 0).count() as u64
    }

    /// Pack into a single-band 16-bit raster for the planar container.
    pub fn to_raster(&self) -> Result<RasterImage> {
        let mut data = Vec::with_capacity(self.labels.len());
        for &l in &self.labels {
            if l > u16::MAX as u32 {
                return Err(Error::InvalidParams(format!(
                    "label {l} does not fit the 16-bit label raster"
                )));
            }
            data.push(l as u16);
        }
        RasterImage::new_u16(self.width, self.height, 1, data)
    }
}

/// Paint instances in ascending score order (ties by instance id), each
/// writing its id over its mask foreground, so higher-score instances
/// overwrite lower-score ones on contested pixels.
pub fn render_label_map<S: Scalar>(set: &InstanceSet<S>) -> LabelMap {
    let mut order: Vec<usize> = (0..set.instances.len()).collect();
    order.sort_by(|&a, &b| {
        let (ia, ib) = (&set.instances[a], &set.instances[b]);
        ia.score
            .partial_cmp(&ib.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ia.instance_id.cmp(&ib.instance_id))
    });

    let mut labels = vec![0u32; set.width as usize * set.height as usize];
    let w = set.width as usize;
    for idx in order {
        let inst = &set.instances[idx];
        let id = inst.instance_id as u32;
        for ColSpan { x, y0, y1 } in inst.global_spans() {
            for y in y0..y1 {
                labels[y as usize * w + x as usize] = id;
            }
        }
    }
    LabelMap {
        width: set.width,
        height: set.height,
        labels,
    }
}
