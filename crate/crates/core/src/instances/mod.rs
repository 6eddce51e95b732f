//! Detection and instance data model: scored boxes, RLE masks, IoU kernels,
//! and the newline-delimited JSON interchange for per-tile detections and
//! image-level annotations.

mod rle;

pub use rle::{mask_iou, merge_spans, spans_intersection_area, BitGrid, ColSpan, RleMask};

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tiling::{Rect, Tile};

/// Fractional axis-aligned box, (x, y) at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<S = f64> {
    pub x: S,
    pub y: S,
    pub w: S,
    pub h: S,
}

impl<S: Scalar> BBox<S> {
    pub fn new(x: S, y: S, w: S, h: S) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_rect(rect: &Rect) -> Self {
        BBox {
            x: S::from_count(rect.x as u64),
            y: S::from_count(rect.y as u64),
            w: S::from_count(rect.w as u64),
            h: S::from_count(rect.h as u64),
        }
    }

    pub fn right(&self) -> S {
        self.x + self.w
    }

    pub fn bottom(&self) -> S {
        self.y + self.h
    }

    pub fn area(&self) -> S {
        self.w * self.h
    }

    pub fn translate(&self, dx: u32, dy: u32) -> Self {
        BBox {
            x: self.x + S::from_count(dx as u64),
            y: self.y + S::from_count(dy as u64),
            w: self.w,
            h: self.h,
        }
    }

    fn to_array(self) -> [S; 4] {
        [self.x, self.y, self.w, self.h]
    }

    fn from_array(a: [S; 4]) -> Self {
        BBox {
            x: a[0],
            y: a[1],
            w: a[2],
            h: a[3],
        }
    }
}

/// Rectangle intersection-over-union; 0 for disjoint or touching boxes.
pub fn bbox_iou<S: Scalar>(a: &BBox<S>, b: &BBox<S>) -> S {
    let ix = (a.right().min(b.right()) - a.x.max(b.x)).max(S::zero());
    let iy = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(S::zero());
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= S::zero() {
        S::zero()
    } else {
        inter / union
    }
}

/// One per-tile detector output: scored box plus mask at tile resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<S = f64> {
    pub tile_id: String,
    pub bbox: BBox<S>,
    pub score: S,
    pub category: u32,
    pub mask: RleMask,
}

/// A fused instance in whole-image coordinates: the mask lives in a tight
/// local frame anchored at (origin_x, origin_y).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalInstance<S = f64> {
    pub instance_id: u64,
    pub bbox: BBox<S>,
    pub score: S,
    pub category: u32,
    pub origin_x: u32,
    pub origin_y: u32,
    pub mask: RleMask,
}

impl<S: Scalar> GlobalInstance<S> {
    /// Mask frame in global coordinates.
    pub fn frame_rect(&self) -> Rect {
        Rect::new(self.origin_x, self.origin_y, self.mask.width(), self.mask.height())
    }

    /// Foreground spans in global coordinates.
    pub fn global_spans(&self) -> Vec<ColSpan> {
        self.mask
            .spans()
            .into_iter()
            .map(|s| ColSpan {
                x: s.x + self.origin_x,
                y0: s.y0 + self.origin_y,
                y1: s.y1 + self.origin_y,
            })
            .collect()
    }

    pub fn mask_area(&self) -> u64 {
        self.mask.area()
    }
}

/// Mask IoU of two instances whose local frames may differ.
pub fn global_mask_iou<S: Scalar>(a: &GlobalInstance<S>, b: &GlobalInstance<S>) -> S {
    if a.frame_rect().intersect(&b.frame_rect()).is_none() {
        return S::zero();
    }
    let inter = spans_intersection_area(&a.global_spans(), &b.global_spans());
    let union = a.mask_area() + b.mask_area() - inter;
    if union == 0 {
        S::zero()
    } else {
        S::from_count(inter) / S::from_count(union)
    }
}

/// All instances of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet<S = f64> {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<GlobalInstance<S>>,
}

impl<S: Scalar> InstanceSet<S> {
    pub fn empty(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        InstanceSet {
            image_id: image_id.into(),
            width,
            height,
            instances: Vec::new(),
        }
    }

    /// Check per-instance invariants against the image extent.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for inst in &self.instances {
            if inst.instance_id == 0 {
                return Err(Error::InvalidParams("instance ids must be >= 1".into()));
            }
            if !seen.insert(inst.instance_id) {
                return Err(Error::InvalidParams(format!(
                    "duplicate instance id {} in image {}",
                    inst.instance_id, self.image_id
                )));
            }
            let frame = inst.frame_rect();
            if frame.right() > self.width || frame.bottom() > self.height {
                return Err(Error::InvalidParams(format!(
                    "instance {} mask frame {:?} exceeds image {}x{}",
                    inst.instance_id, frame, self.width, self.height
                )));
            }
            let (w, h) = (S::from_count(self.width as u64), S::from_count(self.height as u64));
            if inst.bbox.x < S::zero()
                || inst.bbox.y < S::zero()
                || inst.bbox.right() > w
                || inst.bbox.bottom() > h
            {
                return Err(Error::InvalidParams(format!(
                    "instance {} bbox outside image extent",
                    inst.instance_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-image union of instance foregrounds, as merged column spans in
/// global coordinates. This is the semantic-segmentation view an
/// [`InstanceSet`] induces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    spans: Vec<ColSpan>,
}

impl ForegroundMask {
    pub fn from_instances<S: Scalar>(set: &InstanceSet<S>) -> Self {
        let mut spans: Vec<ColSpan> = Vec::new();
        for inst in &set.instances {
            spans.extend(inst.global_spans());
        }
        merge_spans(&mut spans);
        ForegroundMask {
            image_id: set.image_id.clone(),
            width: set.width,
            height: set.height,
            spans,
        }
    }

    pub fn empty(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        ForegroundMask {
            image_id: image_id.into(),
            width,
            height,
            spans: Vec::new(),
        }
    }

    pub fn spans(&self) -> &[ColSpan] {
        &self.spans
    }

    pub fn area(&self) -> u64 {
        self.spans.iter().map(|s| s.len() as u64).sum()
    }

    pub fn total_pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn intersection_area(&self, other: &ForegroundMask) -> u64 {
        spans_intersection_area(&self.spans, &other.spans)
    }
}

/// Serialized mask: `{"size": [h, w], "counts": [...]}` (height first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleRecord {
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl RleRecord {
    pub fn from_mask(mask: &RleMask) -> Self {
        RleRecord {
            size: [mask.height(), mask.width()],
            counts: mask.counts().to_vec(),
        }
    }

    pub fn to_mask(&self) -> Result<RleMask> {
        RleMask::new(self.size[1], self.size[0], self.counts.clone())
    }
}

/// On-disk detection record (one JSON object per line).
#[derive(Debug, Serialize, Deserialize)]
struct DetRecord<S> {
    tile_id: String,
    bbox: [S; 4],
    score: S,
    category_id: u32,
    segmentation: RleRecord,
}

/// On-disk image-level annotation record (one JSON object per line).
#[derive(Debug, Serialize, Deserialize)]
struct AnnRecord<S> {
    image_id: String,
    ann_id: u64,
    bbox: [S; 4],
    score: S,
    category_id: u32,
    segmentation: RleRecord,
}

fn validate_score<S: Scalar>(score: S) -> std::result::Result<(), String> {
    if !score.is_finite() || score < S::zero() || score > S::one() {
        return Err(format!("score {score} outside [0, 1]"));
    }
    Ok(())
}

fn validate_bbox_in_frame<S: Scalar>(bbox: &BBox<S>, w: u32, h: u32) -> std::result::Result<(), String> {
    let fits = bbox.x.is_finite()
        && bbox.y.is_finite()
        && bbox.w > S::zero()
        && bbox.h > S::zero()
        && bbox.x >= S::zero()
        && bbox.y >= S::zero()
        && bbox.right() <= S::from_count(w as u64)
        && bbox.bottom() <= S::from_count(h as u64);
    if !fits {
        return Err(format!(
            "bbox [{}, {}, {}, {}] does not fit a {w}x{h} frame",
            bbox.x, bbox.y, bbox.w, bbox.h
        ));
    }
    Ok(())
}

/// Parse a detections file and group records by tile, preserving input
/// order within each tile. Every record is validated against the manifest
/// geometry; violations name the failing record.
pub fn parse_detections<S: Scalar + DeserializeOwned>(
    path: impl AsRef<Path>,
    manifest: &crate::tiling::TileManifest,
) -> Result<BTreeMap<String, Vec<Detection<S>>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tile_dims: BTreeMap<&str, (u32, u32)> = manifest
        .tiles
        .iter()
        .map(|t| (t.tile_id.as_str(), (t.w, t.h)))
        .collect();

    let mut grouped: BTreeMap<String, Vec<Detection<S>>> = BTreeMap::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetRecord<S> = serde_json::from_str(line).map_err(|e| Error::Record {
            index,
            msg: format!("bad json: {e}"),
        })?;
        let &(tw, th) = tile_dims
            .get(rec.tile_id.as_str())
            .ok_or_else(|| Error::UnknownTile(rec.tile_id.clone()))?;
        let mask = rec.segmentation.to_mask().map_err(|e| Error::Record {
            index,
            msg: format!("bad mask: {e}"),
        })?;
        if mask.width() != tw || mask.height() != th {
            return Err(Error::Record {
                index,
                msg: format!(
                    "mask size {}x{} does not match tile `{}` size {}x{}",
                    mask.width(),
                    mask.height(),
                    rec.tile_id,
                    tw,
                    th
                ),
            });
        }
        if mask.area() == 0 {
            return Err(Error::Record {
                index,
                msg: "mask has no foreground".into(),
            });
        }
        validate_score(rec.score).map_err(|msg| Error::Record { index, msg })?;
        let bbox = BBox::from_array(rec.bbox);
        validate_bbox_in_frame(&bbox, tw, th).map_err(|msg| Error::Record { index, msg })?;

        grouped.entry(rec.tile_id.clone()).or_default().push(Detection {
            tile_id: rec.tile_id,
            bbox,
            score: rec.score,
            category: rec.category_id,
            mask,
        });
    }
    Ok(grouped)
}

/// Write detections as newline-delimited JSON.
pub fn write_detections<'a, S: Scalar + Serialize + 'a>(
    path: impl AsRef<Path>,
    dets: impl IntoIterator<Item = &'a Detection<S>>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for det in dets {
        let rec = DetRecord {
            tile_id: det.tile_id.clone(),
            bbox: det.bbox.to_array(),
            score: det.score,
            category_id: det.category,
            segmentation: RleRecord::from_mask(&det.mask),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::decode(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Expand an instance's tight local mask to a full-image-frame RLE record.
pub fn image_frame_record<S: Scalar>(
    inst: &GlobalInstance<S>,
    image_width: u32,
    image_height: u32,
) -> RleRecord {
    let spans = inst.global_spans();
    let mask = RleMask::from_spans(image_width, image_height, &spans);
    RleRecord::from_mask(&mask)
}

/// Parse an image-level annotation file into per-image instance sets,
/// re-framing each mask to its tight bounding box. Images appear in
/// first-seen order.
pub fn parse_annotations<S: Scalar + DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<Vec<InstanceSet<S>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut sets: Vec<InstanceSet<S>> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();

    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnRecord<S> = serde_json::from_str(line).map_err(|e| Error::Record {
            index,
            msg: format!("bad json: {e}"),
        })?;
        let (h, w) = (rec.segmentation.size[0], rec.segmentation.size[1]);
        let set_idx = *by_id.entry(rec.image_id.clone()).or_insert_with(|| {
            sets.push(InstanceSet::empty(rec.image_id.clone(), w, h));
            sets.len() - 1
        });
        let set = &mut sets[set_idx];
        if set.width != w || set.height != h {
            return Err(Error::Record {
                index,
                msg: format!(
                    "image `{}` size {}x{} disagrees with earlier records ({}x{})",
                    rec.image_id, w, h, set.width, set.height
                ),
            });
        }
        if rec.ann_id == 0 {
            return Err(Error::Record {
                index,
                msg: "ann_id must be >= 1".into(),
            });
        }
        let full = rec.segmentation.to_mask().map_err(|e| Error::Record {
            index,
            msg: format!("bad mask: {e}"),
        })?;
        let tight = full.tight_bbox().ok_or_else(|| Error::Record {
            index,
            msg: "mask has no foreground".into(),
        })?;
        let mask = full.crop(&tight).expect("tight bbox fits its own mask");
        validate_score(rec.score).map_err(|msg| Error::Record { index, msg })?;
        let bbox = BBox::from_array(rec.bbox);
        validate_bbox_in_frame(&bbox, w, h).map_err(|msg| Error::Record { index, msg })?;

        set.instances.push(GlobalInstance {
            instance_id: rec.ann_id,
            bbox,
            score: rec.score,
            category: rec.category_id,
            origin_x: tight.x,
            origin_y: tight.y,
            mask,
        });
    }

    for set in &sets {
        set.validate()?;
    }
    Ok(sets)
}

/// Write instance sets as newline-delimited image-level annotations, masks
/// expanded to the full image frame.
pub fn write_annotations<S: Scalar + Serialize>(
    path: impl AsRef<Path>,
    sets: &[InstanceSet<S>],
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for set in sets {
        for inst in &set.instances {
            let rec = AnnRecord {
                image_id: set.image_id.clone(),
                ann_id: inst.instance_id,
                bbox: inst.bbox.to_array(),
                score: inst.score,
                category_id: inst.category,
                segmentation: image_frame_record(inst, set.width, set.height),
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| Error::decode(path, e.to_string()))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Clip a global instance into one tile's frame: the mask is re-painted at
/// tile resolution, the box intersected with the tile extent, and both are
/// expressed in tile-local coordinates. Returns None when the instance has
/// no foreground inside the tile.
pub fn clip_to_tile<S: Scalar>(
    inst: &GlobalInstance<S>,
    tile: &Tile,
    tile_id: &str,
) -> Option<Detection<S>> {
    let extent = tile.extent();
    inst.frame_rect().intersect(&extent)?;

    let spans: Vec<ColSpan> = inst
        .global_spans()
        .into_iter()
        .filter(|s| s.x >= extent.x && s.x < extent.right())
        .filter_map(|s| {
            let y0 = s.y0.max(extent.y);
            let y1 = s.y1.min(extent.bottom());
            (y0 < y1).then(|| ColSpan {
                x: s.x - extent.x,
                y0: y0 - extent.y,
                y1: y1 - extent.y,
            })
        })
        .collect();
    if spans.is_empty() {
        return None;
    }
    let mask = RleMask::from_spans(tile.width, tile.height, &spans);

    let ex = S::from_count(extent.x as u64);
    let ey = S::from_count(extent.y as u64);
    let x0 = inst.bbox.x.max(ex);
    let y0 = inst.bbox.y.max(ey);
    let x1 = inst.bbox.right().min(S::from_count(extent.right() as u64));
    let y1 = inst.bbox.bottom().min(S::from_count(extent.bottom() as u64));
    debug_assert!(x1 > x0 && y1 > y0, "mask foreground implies box overlap");

    Some(Detection {
        tile_id: tile_id.to_string(),
        bbox: BBox::new(x0 - ex, y0 - ey, x1 - x0, y1 - y0),
        score: inst.score,
        category: inst.category,
        mask,
    })
}
