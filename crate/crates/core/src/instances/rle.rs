//! Run-length-encoded binary masks.
//!
//! Runs follow the COCO uncompressed convention: column-major scan order,
//! alternating background/foreground counts starting with a (possibly zero)
//! background run. Pixel (x, y) sits at flat index `x * height + y`.
//!
//! Masks are stored per instance in tight local frames; all geometry here
//! (crop, bounding box, intersection) works directly on runs or on
//! per-column foreground spans, never on full-image grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tiling::Rect;

/// Dense row-major binary grid; the decode target and test oracle carrier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGrid {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BitGrid {
    pub fn new(width: u32, height: u32) -> Self {
        BitGrid {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }
}

/// One vertical run of foreground in column `x`, half-open `[y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColSpan {
    pub x: u32,
    pub y0: u32,
    pub y1: u32,
}

impl ColSpan {
    /// Run length; spans are non-empty by construction (y0 < y1).
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u32 {
        self.y1 - self.y0
    }
}

/// Run-length-encoded binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

impl RleMask {
    /// Validate and adopt a raw run list.
    pub fn new(width: u32, height: u32, counts: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParams("mask dimensions must be >= 1".into()));
        }
        let total = width as u64 * height as u64;
        if total > u32::MAX as u64 {
            return Err(Error::InvalidParams(format!(
                "mask {width}x{height} exceeds the supported pixel count"
            )));
        }
        if counts.is_empty() {
            return Err(Error::InvalidParams("run list must not be empty".into()));
        }
        if counts.iter().skip(1).any(|&c| c == 0) {
            return Err(Error::InvalidParams(
                "zero runs are only allowed as the leading background count".into(),
            ));
        }
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        if sum != total {
            return Err(Error::InvalidParams(format!(
                "run counts sum to {sum}, expected {width}x{height} = {total}"
            )));
        }
        Ok(RleMask {
            width,
            height,
            counts,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| c as u64)
            .sum()
    }

    /// Encode a dense grid (column-major scan, background first).
    pub fn encode(grid: &BitGrid) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run: u32 = 0;
        for x in 0..grid.width() {
            for y in 0..grid.height() {
                let v = grid.get(x, y);
                if v == current {
                    run += 1;
                } else {
                    counts.push(run);
                    current = v;
                    run = 1;
                }
            }
        }
        counts.push(run);
        RleMask {
            width: grid.width(),
            height: grid.height(),
            counts,
        }
    }

    /// Decode to a dense grid; inverse of [`RleMask::encode`].
    pub fn decode(&self) -> BitGrid {
        let mut grid = BitGrid::new(self.width, self.height);
        for span in self.spans() {
            for y in span.y0..span.y1 {
                grid.set(span.x, y, true);
            }
        }
        grid
    }

    /// Foreground runs as per-column spans, ordered by (x, y0).
    pub fn spans(&self) -> Vec<ColSpan> {
        let h = self.height;
        let mut spans = Vec::new();
        let mut pos: u64 = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if i % 2 == 1 && c > 0 {
                // Split a foreground run at column boundaries.
                let mut start = pos;
                let end = pos + c as u64;
                while start < end {
                    let x = (start / h as u64) as u32;
                    let y0 = (start % h as u64) as u32;
                    let col_end = ((x as u64 + 1) * h as u64).min(end);
                    spans.push(ColSpan {
                        x,
                        y0,
                        y1: y0 + (col_end - start) as u32,
                    });
                    start = col_end;
                }
            }
            pos += c as u64;
        }
        spans
    }

    /// Build a mask from sorted, per-column-disjoint foreground spans.
    pub fn from_spans(width: u32, height: u32, spans: &[ColSpan]) -> Self {
        let total = width as u64 * height as u64;
        let mut counts: Vec<u32> = Vec::with_capacity(spans.len() * 2 + 1);
        let mut pos: u64 = 0;
        for span in spans {
            debug_assert!(span.x < width && span.y1 <= height && span.y0 < span.y1);
            let start = span.x as u64 * height as u64 + span.y0 as u64;
            debug_assert!(start >= pos, "spans must be sorted and disjoint");
            let gap = (start - pos) as u32;
            if gap == 0 && counts.len() > 1 {
                // Adjacent foreground runs merge (keeps the encoding canonical).
                *counts.last_mut().unwrap() += span.len();
            } else {
                counts.push(gap);
                counts.push(span.len());
            }
            pos = start + span.len() as u64;
        }
        if pos < total || counts.is_empty() {
            counts.push((total - pos) as u32);
        }
        RleMask {
            width,
            height,
            counts,
        }
    }

    /// Tight bounding box of the foreground, or None for an empty mask.
    pub fn tight_bbox(&self) -> Option<Rect> {
        let spans = self.spans();
        if spans.is_empty() {
            return None;
        }
        let x0 = spans.first().unwrap().x;
        let x1 = spans.last().unwrap().x + 1;
        let y0 = spans.iter().map(|s| s.y0).min().unwrap();
        let y1 = spans.iter().map(|s| s.y1).max().unwrap();
        Some(Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Crop to `rect` (which must lie within the mask frame); the output
    /// frame is `rect.w x rect.h` with origin at `(rect.x, rect.y)`.
    pub fn crop(&self, rect: &Rect) -> Result<RleMask> {
        if rect.is_empty() || rect.right() > self.width || rect.bottom() > self.height {
            return Err(Error::InvalidParams(format!(
                "crop rect {rect:?} does not fit mask frame {}x{}",
                self.width, self.height
            )));
        }
        let clipped: Vec<ColSpan> = self
            .spans()
            .into_iter()
            .filter(|s| s.x >= rect.x && s.x < rect.right())
            .filter_map(|s| {
                let y0 = s.y0.max(rect.y);
                let y1 = s.y1.min(rect.bottom());
                (y0 < y1).then(|| ColSpan {
                    x: s.x - rect.x,
                    y0: y0 - rect.y,
                    y1: y1 - rect.y,
                })
            })
            .collect();
        Ok(RleMask::from_spans(rect.w, rect.h, &clipped))
    }

    /// |a AND b| for equal-sized frames, walking both run streams.
    pub fn intersection_area(&self, other: &RleMask) -> Result<u64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(format!(
                "mask frames differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let mut inter: u64 = 0;
        let (mut i, mut j) = (0usize, 0usize);
        let (mut rem_a, mut rem_b) = (self.counts[0] as u64, other.counts[0] as u64);
        loop {
            // Skip exhausted runs; run index parity encodes the value.
            while rem_a == 0 {
                i += 1;
                if i >= self.counts.len() {
                    return Ok(inter);
                }
                rem_a = self.counts[i] as u64;
            }
            while rem_b == 0 {
                j += 1;
                if j >= other.counts.len() {
                    return Ok(inter);
                }
                rem_b = other.counts[j] as u64;
            }
            let step = rem_a.min(rem_b);
            if i % 2 == 1 && j % 2 == 1 {
                inter += step;
            }
            rem_a -= step;
            rem_b -= step;
        }
    }
}

/// Intersection-over-union of two equal-frame masks; 0 when both are empty.
pub fn mask_iou<S: Scalar>(a: &RleMask, b: &RleMask) -> Result<S> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(S::zero());
    }
    Ok(S::from_count(inter) / S::from_count(union))
}

/// |a AND b| of two span lists sorted by (x, y0), each disjoint per column.
pub fn spans_intersection_area(a: &[ColSpan], b: &[ColSpan]) -> u64 {
    let mut inter = 0u64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        let (sa, sb) = (&a[i], &b[j]);
        if sa.x != sb.x {
            if sa.x < sb.x {
                i += 1;
            } else {
                j += 1;
            }
            continue;
        }
        let lo = sa.y0.max(sb.y0);
        let hi = sa.y1.min(sb.y1);
        if lo < hi {
            inter += (hi - lo) as u64;
        }
        if sa.y1 <= sb.y1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    inter
}

/// Union a span list in place: sort by (x, y0) and merge overlapping or
/// touching spans within each column.
pub fn merge_spans(spans: &mut Vec<ColSpan>) {
    spans.sort_unstable_by_key(|s| (s.x, s.y0));
    let mut out: Vec<ColSpan> = Vec::with_capacity(spans.len());
    for s in spans.drain(..) {
        match out.last_mut() {
            Some(last) if last.x == s.x && s.y0 <= last.y1 => {
                last.y1 = last.y1.max(s.y1);
            }
            _ => out.push(s),
        }
    }
    *spans = out;
}
