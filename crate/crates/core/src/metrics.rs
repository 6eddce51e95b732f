//! Competition scoring: instance-segmentation AP50, binary semantic mIoU,
//! and the weighted Score1 / Score2 aggregates.
//!
//! AP50 pools predictions across images, sorts by score, and greedily
//! matches each prediction to the unmatched same-image ground-truth
//! instance of highest mask IoU; a true positive requires IoU >= 0.5 (the
//! closed threshold is the COCO-tooling reading of "above 0.5"). mIoU is
//! pooled over the pixels of all images, and a class absent from both sides
//! contributes IoU 1. Both choices are echoed in the report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{spans_intersection_area, ColSpan, ForegroundMask, InstanceSet};
use crate::scalar::Scalar;

/// How the precision envelope is integrated into AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApInterpolation {
    /// Exact area under the precision envelope over all recall steps.
    AllPoints,
    /// COCO-style 101-point recall grid, for cross-checking.
    Coco101,
}

/// AP50 plus the match counts behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApBreakdown<S = f64> {
    /// Percent in [0, 100].
    pub ap50: S,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

/// mIoU plus the pooled pixel confusion behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiouBreakdown<S = f64> {
    /// Percent in [0, 100].
    pub miou: S,
    pub iou_foreground: S,
    pub iou_background: S,
    pub pixel_tp: u64,
    pub pixel_fp: u64,
    pub pixel_fn: u64,
    pub pixel_tn: u64,
}

/// Full evaluation report. `score1 = 0.6 * ap50 + 0.4 * miou` exactly;
/// `score2` additionally needs the judge-assigned subscores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<S = f64> {
    pub ap50: S,
    pub miou: S,
    pub score1: S,
    pub score2: Option<S>,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub pixel_tp: u64,
    pub pixel_fp: u64,
    pub pixel_fn: u64,
    pub pixel_tn: u64,
    pub ap_interpolation: ApInterpolation,
    /// The matching threshold convention actually applied.
    pub ap_iou_rule: String,
    /// How mIoU aggregates across images.
    pub miou_pooling: String,
}

/// Judge-assigned subscores feeding Score2; never computed here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeSubscores<S = f64> {
    pub eff: S,
    pub cod: S,
    pub doc: S,
}

struct ImageEval<'a, S> {
    gt: &'a InstanceSet<S>,
    pred: Option<&'a InstanceSet<S>>,
}

fn index_sets<'a, S: Scalar>(
    gt: &'a [InstanceSet<S>],
    pred: &'a [InstanceSet<S>],
) -> Result<Vec<ImageEval<'a, S>>> {
    let mut by_id: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, set) in gt.iter().enumerate() {
        if by_id.insert(set.image_id.as_str(), i).is_some() {
            return Err(Error::InvalidParams(format!(
                "duplicate ground-truth image id `{}`",
                set.image_id
            )));
        }
    }
    let mut preds: Vec<Option<&InstanceSet<S>>> = vec![None; gt.len()];
    for set in pred {
        let &idx = by_id.get(set.image_id.as_str()).ok_or_else(|| {
            Error::InvalidParams(format!(
                "mismatched image id sets: prediction image `{}` has no ground truth",
                set.image_id
            ))
        })?;
        if preds[idx].is_some() {
            return Err(Error::InvalidParams(format!(
                "duplicate prediction image id `{}`",
                set.image_id
            )));
        }
        let g = &gt[idx];
        if g.width != set.width || g.height != set.height {
            return Err(Error::DimensionMismatch(format!(
                "image `{}` is {}x{} in ground truth but {}x{} in predictions",
                set.image_id, g.width, g.height, set.width, set.height
            )));
        }
        preds[idx] = Some(set);
    }
    Ok(gt
        .iter()
        .zip(preds)
        .map(|(g, p)| ImageEval { gt: g, pred: p })
        .collect())
}

/// Pooled instance-segmentation average precision at mask IoU >= 0.5,
/// as a percent. Ground truth defines the image universe; images without
/// predictions simply contribute misses.
pub fn ap50<S: Scalar>(
    gt: &[InstanceSet<S>],
    pred: &[InstanceSet<S>],
    interp: ApInterpolation,
) -> Result<ApBreakdown<S>> {
    let images = index_sets(gt, pred)?;
    let n_gt: u64 = images.iter().map(|im| im.gt.instances.len() as u64).sum();
    if n_gt == 0 {
        return Err(Error::InvalidParams(
            "ap50 needs at least one ground-truth instance".into(),
        ));
    }

    let half = S::real(0.5);

    // Per image: for every prediction, the ground-truth candidates with
    // IoU >= 0.5, best first (ties prefer the lower instance id).
    struct ImageTable<S> {
        candidates: Vec<Vec<(S, usize)>>,
        gt_ids: Vec<u64>,
    }
    let tables: Vec<ImageTable<S>> = images
        .par_iter()
        .map(|im| {
            let gt_spans: Vec<(Vec<ColSpan>, u64)> = im
                .gt
                .instances
                .iter()
                .map(|g| (g.global_spans(), g.mask_area()))
                .collect();
            let preds = im.pred.map(|p| p.instances.as_slice()).unwrap_or(&[]);
            let candidates = preds
                .iter()
                .map(|p| {
                    let p_spans = p.global_spans();
                    let p_area = p.mask_area();
                    let p_frame = p.frame_rect();
                    let mut cands: Vec<(S, usize)> = im
                        .gt
                        .instances
                        .iter()
                        .enumerate()
                        .filter(|(_, g)| g.frame_rect().intersect(&p_frame).is_some())
                        .filter_map(|(gi, _)| {
                            let inter = spans_intersection_area(&p_spans, &gt_spans[gi].0);
                            let union = p_area + gt_spans[gi].1 - inter;
                            if union == 0 {
                                return None;
                            }
                            let iou = S::from_count(inter) / S::from_count(union);
                            (iou >= half).then_some((iou, gi))
                        })
                        .collect();
                    cands.sort_by(|a, b| {
                        b.0.partial_cmp(&a.0)
                            .unwrap_or(std::cmp::Ordering::Equal)
                            .then(
                                im.gt.instances[a.1]
                                    .instance_id
                                    .cmp(&im.gt.instances[b.1].instance_id),
                            )
                    });
                    cands
                })
                .collect();
            ImageTable {
                candidates,
                gt_ids: im.gt.instances.iter().map(|g| g.instance_id).collect(),
            }
        })
        .collect();

    // Pool predictions across images: score descending, ties by image id
    // then instance id.
    let mut pooled: Vec<(S, usize, usize)> = Vec::new();
    for (img_idx, im) in images.iter().enumerate() {
        if let Some(p) = im.pred {
            for (pred_idx, inst) in p.instances.iter().enumerate() {
                pooled.push((inst.score, img_idx, pred_idx));
            }
        }
    }
    pooled.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                let (ia, ib) = (&images[a.1], &images[b.1]);
                ia.gt
                    .image_id
                    .cmp(&ib.gt.image_id)
                    .then_with(|| {
                        let pa = ia.pred.unwrap().instances[a.2].instance_id;
                        let pb = ib.pred.unwrap().instances[b.2].instance_id;
                        pa.cmp(&pb)
                    })
            })
    });

    // Greedy matching in pooled order.
    let mut matched: Vec<Vec<bool>> = tables
        .iter()
        .map(|t| vec![false; t.gt_ids.len()])
        .collect();
    let mut is_tp: Vec<bool> = Vec::with_capacity(pooled.len());
    for &(_, img_idx, pred_idx) in &pooled {
        let table = &tables[img_idx];
        let hit = table.candidates[pred_idx]
            .iter()
            .find(|&&(_, gi)| !matched[img_idx][gi]);
        match hit {
            Some(&(_, gi)) => {
                matched[img_idx][gi] = true;
                is_tp.push(true);
            }
            None => is_tp.push(false),
        }
    }
    let tp = is_tp.iter().filter(|&&t| t).count() as u64;
    let fp = is_tp.len() as u64 - tp;

    let ap = ap_from_matches::<S>(&is_tp, n_gt, interp);
    Ok(ApBreakdown {
        ap50: ap * S::real(100.0),
        true_positives: tp,
        false_positives: fp,
        false_negatives: n_gt - tp,
    })
}

/// Integrate the match sequence into AP in [0, 1].
///
/// Recall rises by exactly 1/n_gt at each true positive, so the all-points
/// area is the sum of the precision envelope at the TP points divided by
/// n_gt; summing counts first keeps the perfect-detector case exactly 1.
fn ap_from_matches<S: Scalar>(is_tp: &[bool], n_gt: u64, interp: ApInterpolation) -> S {
    let n = is_tp.len();
    if n == 0 {
        return S::zero();
    }
    // Precision after each prediction, then the envelope: the max
    // precision at recall >= r.
    let mut envelope: Vec<S> = Vec::with_capacity(n);
    let mut tp = 0u64;
    for (i, &t) in is_tp.iter().enumerate() {
        tp += t as u64;
        envelope.push(S::from_count(tp) / S::from_count(i as u64 + 1));
    }
    for i in (0..n - 1).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    match interp {
        ApInterpolation::AllPoints => {
            let mut total = S::zero();
            for (i, &t) in is_tp.iter().enumerate() {
                if t {
                    total = total + envelope[i];
                }
            }
            total / S::from_count(n_gt)
        }
        ApInterpolation::Coco101 => {
            let n_gt_s = S::from_count(n_gt);
            let mut tp = 0u64;
            let recall: Vec<S> = is_tp
                .iter()
                .map(|&t| {
                    tp += t as u64;
                    S::from_count(tp) / n_gt_s
                })
                .collect();
            let mut total = S::zero();
            let mut idx = 0usize;
            for step in 0..=100u32 {
                let thr = S::real(step as f64 / 100.0);
                while idx < n && recall[idx] < thr {
                    idx += 1;
                }
                if idx < n {
                    total = total + envelope[idx];
                }
            }
            total / S::real(101.0)
        }
    }
}

/// Pooled binary mIoU over explicit per-image foregrounds, as a percent.
pub fn miou<S: Scalar>(
    gt_fg: &[ForegroundMask],
    pred: &[InstanceSet<S>],
) -> Result<MiouBreakdown<S>> {
    let mut by_id: BTreeMap<&str, &ForegroundMask> = BTreeMap::new();
    for fg in gt_fg {
        if by_id.insert(fg.image_id.as_str(), fg).is_some() {
            return Err(Error::InvalidParams(format!(
                "duplicate ground-truth image id `{}`",
                fg.image_id
            )));
        }
    }
    let pred_fg: Vec<ForegroundMask> = pred.par_iter().map(ForegroundMask::from_instances).collect();
    let mut pred_by_id: BTreeMap<&str, &ForegroundMask> = BTreeMap::new();
    for fg in &pred_fg {
        let gt = by_id.get(fg.image_id.as_str()).ok_or_else(|| {
            Error::InvalidParams(format!(
                "mismatched image id sets: prediction image `{}` has no ground truth",
                fg.image_id
            ))
        })?;
        if gt.width != fg.width || gt.height != fg.height {
            return Err(Error::DimensionMismatch(format!(
                "image `{}` is {}x{} in ground truth but {}x{} in predictions",
                fg.image_id, gt.width, gt.height, fg.width, fg.height
            )));
        }
        if pred_by_id.insert(fg.image_id.as_str(), fg).is_some() {
            return Err(Error::InvalidParams(format!(
                "duplicate prediction image id `{}`",
                fg.image_id
            )));
        }
    }

    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for gt in gt_fg {
        let empty = ForegroundMask::empty(gt.image_id.clone(), gt.width, gt.height);
        let p = pred_by_id.get(gt.image_id.as_str()).copied().unwrap_or(&empty);
        let inter = gt.intersection_area(p);
        let (ga, pa) = (gt.area(), p.area());
        tp += inter;
        fn_ += ga - inter;
        fp += pa - inter;
        tn += gt.total_pixels() - (ga + pa - inter);
    }

    // A class absent from both ground truth and prediction scores IoU 1.
    let class_iou = |inter: u64, denom: u64| {
        if denom == 0 {
            S::one()
        } else {
            S::from_count(inter) / S::from_count(denom)
        }
    };
    let iou_fg = class_iou(tp, tp + fp + fn_);
    let iou_bg = class_iou(tn, tn + fp + fn_);
    let half = S::real(0.5);
    Ok(MiouBreakdown {
        miou: (iou_fg + iou_bg) * half * S::real(100.0),
        iou_foreground: iou_fg,
        iou_background: iou_bg,
        pixel_tp: tp,
        pixel_fp: fp,
        pixel_fn: fn_,
        pixel_tn: tn,
    })
}

/// [`miou`] with the ground-truth foregrounds derived from instance sets.
pub fn miou_sets<S: Scalar>(
    gt: &[InstanceSet<S>],
    pred: &[InstanceSet<S>],
) -> Result<MiouBreakdown<S>> {
    let gt_fg: Vec<ForegroundMask> = gt.par_iter().map(ForegroundMask::from_instances).collect();
    miou(&gt_fg, pred)
}

/// `Score1 = 0.6 * AP50 + 0.4 * mIoU`, inputs as percents in [0, 100].
pub fn score1<S: Scalar>(ap50: S, miou: S) -> Result<S> {
    let hundred = S::real(100.0);
    for (name, v) in [("ap50", ap50), ("miou", miou)] {
        if !(v >= S::zero() && v <= hundred) {
            return Err(Error::InvalidParams(format!("{name} {v} outside [0, 100]")));
        }
    }
    Ok(S::real(0.6) * ap50 + S::real(0.4) * miou)
}

/// `Score2 = 0.5 * Score1 + 0.3 * eff + 0.1 * cod + 0.1 * doc`, with the
/// last three supplied externally.
pub fn score2<S: Scalar>(score1: S, eff: S, cod: S, doc: S) -> S {
    S::real(0.5) * score1 + S::real(0.3) * eff + S::real(0.1) * (cod + doc)
}

/// Run the full scoring pass over matched image sets.
pub fn evaluate<S: Scalar>(
    gt: &[InstanceSet<S>],
    pred: &[InstanceSet<S>],
    interp: ApInterpolation,
    subscores: Option<JudgeSubscores<S>>,
) -> Result<EvalReport<S>> {
    let ap = ap50(gt, pred, interp)?;
    let mi = miou_sets(gt, pred)?;
    let s1 = score1(ap.ap50, mi.miou)?;
    Ok(EvalReport {
        ap50: ap.ap50,
        miou: mi.miou,
        score1: s1,
        score2: subscores.map(|j| score2(s1, j.eff, j.cod, j.doc)),
        true_positives: ap.true_positives,
        false_positives: ap.false_positives,
        false_negatives: ap.false_negatives,
        pixel_tp: mi.pixel_tp,
        pixel_fp: mi.pixel_fp,
        pixel_fn: mi.pixel_fn,
        pixel_tn: mi.pixel_tn,
        ap_interpolation: interp,
        ap_iou_rule: "tp requires mask IoU >= 0.5".to_string(),
        miou_pooling: "pixel confusion pooled over all images".to_string(),
    })
}
