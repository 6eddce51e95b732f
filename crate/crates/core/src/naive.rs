//! Slow reference implementations used to validate the fast paths.
//!
//! Everything here works on dense per-pixel grids, recomputes matchings
//! from scratch per prediction prefix, and integrates the precision
//! envelope by full scans. Quadratic or worse; only suitable for small
//! scenes, which is the point: these share no code with the production
//! implementations they check.

use crate::instances::{BitGrid, GlobalInstance, InstanceSet};

/// Paint an instance's mask into a dense image-sized grid.
fn dense_mask(inst: &GlobalInstance<f64>, width: u32, height: u32) -> BitGrid {
    let mut g = BitGrid::new(width, height);
    let local = inst.mask.decode();
    for ly in 0..local.height() {
        for lx in 0..local.width() {
            if local.get(lx, ly) {
                g.set(inst.origin_x + lx, inst.origin_y + ly, true);
            }
        }
    }
    g
}

/// Per-pixel mask IoU of two instances of the same image.
pub fn pixel_iou(a: &GlobalInstance<f64>, b: &GlobalInstance<f64>, width: u32, height: u32) -> f64 {
    let (ga, gb) = (dense_mask(a, width, height), dense_mask(b, width, height));
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..height {
        for x in 0..width {
            let (pa, pb) = (ga.get(x, y), gb.get(x, y));
            if pa && pb {
                inter += 1;
            }
            if pa || pb {
                union += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// All-points AP50 (percent) by brute force: per-pixel IoUs, matchings
/// re-enumerated from scratch for every prediction prefix, and the
/// envelope maximum found by scanning the whole PR sequence per step.
pub fn ap50_reference(gt: &[InstanceSet<f64>], pred: &[InstanceSet<f64>]) -> f64 {
    let n_gt: usize = gt.iter().map(|s| s.instances.len()).sum();
    assert!(n_gt > 0, "reference AP needs ground truth");

    // Pool predictions: score descending, ties by image id then instance id.
    let mut pooled: Vec<(usize, usize)> = Vec::new();
    for (si, set) in pred.iter().enumerate() {
        for pi in 0..set.instances.len() {
            pooled.push((si, pi));
        }
    }
    pooled.sort_by(|&(sa, pa), &(sb, pb)| {
        let (a, b) = (&pred[sa].instances[pa], &pred[sb].instances[pb]);
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(pred[sa].image_id.cmp(&pred[sb].image_id))
            .then(a.instance_id.cmp(&b.instance_id))
    });

    // For each prefix length k, replay the greedy matching from scratch.
    let n = pooled.len();
    let mut recall = vec![0.0f64; n];
    let mut precision = vec![0.0f64; n];
    for k in 1..=n {
        let mut matched: Vec<Vec<bool>> = gt.iter().map(|s| vec![false; s.instances.len()]).collect();
        let mut tp = 0usize;
        for &(si, pi) in &pooled[..k] {
            let p = &pred[si].instances[pi];
            let Some(gt_idx) = gt.iter().position(|s| s.image_id == pred[si].image_id) else {
                continue;
            };
            let gset = &gt[gt_idx];
            let mut best: Option<(f64, usize)> = None;
            for (gi, g) in gset.instances.iter().enumerate() {
                if matched[gt_idx][gi] {
                    continue;
                }
                let iou = pixel_iou(p, g, gset.width, gset.height);
                let better = match best {
                    None => true,
                    Some((bi, bg)) => {
                        iou > bi
                            || (iou == bi
                                && g.instance_id < gset.instances[bg].instance_id)
                    }
                };
                if better {
                    best = Some((iou, gi));
                }
            }
            if let Some((iou, gi)) = best {
                if iou >= 0.5 {
                    matched[gt_idx][gi] = true;
                    tp += 1;
                }
            }
        }
        recall[k - 1] = tp as f64 / n_gt as f64;
        precision[k - 1] = tp as f64 / k as f64;
    }

    // Sum Delta-recall times the max precision at recall >= r, scanning the
    // whole sequence for every step.
    let mut ap = 0.0;
    let mut prev = 0.0;
    for i in 0..n {
        if recall[i] > prev {
            let max_p = (0..n)
                .filter(|&j| recall[j] >= recall[i])
                .map(|j| precision[j])
                .fold(0.0f64, f64::max);
            ap += (recall[i] - prev) * max_p;
            prev = recall[i];
        }
    }
    ap * 100.0
}

/// Pooled binary mIoU (percent) from dense per-pixel foreground unions.
pub fn miou_reference(gt: &[InstanceSet<f64>], pred: &[InstanceSet<f64>]) -> f64 {
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for gset in gt {
        let pset = pred.iter().find(|s| s.image_id == gset.image_id);
        let mut gt_fg = BitGrid::new(gset.width, gset.height);
        for inst in &gset.instances {
            let dense = dense_mask(inst, gset.width, gset.height);
            for y in 0..gset.height {
                for x in 0..gset.width {
                    if dense.get(x, y) {
                        gt_fg.set(x, y, true);
                    }
                }
            }
        }
        let mut pred_fg = BitGrid::new(gset.width, gset.height);
        if let Some(pset) = pset {
            for inst in &pset.instances {
                let dense = dense_mask(inst, gset.width, gset.height);
                for y in 0..gset.height {
                    for x in 0..gset.width {
                        if dense.get(x, y) {
                            pred_fg.set(x, y, true);
                        }
                    }
                }
            }
        }
        for y in 0..gset.height {
            for x in 0..gset.width {
                match (gt_fg.get(x, y), pred_fg.get(x, y)) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
    }
    let iou_fg = if tp + fp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp + fn_) as f64
    };
    let iou_bg = if tn + fp + fn_ == 0 {
        1.0
    } else {
        tn as f64 / (tn + fp + fn_) as f64
    };
    (iou_fg + iou_bg) / 2.0 * 100.0
}
