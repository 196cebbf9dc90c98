//! COCO-style average precision with per-class and cohort aggregation.
//!
//! Per class: greedy per-image matching at each IoU threshold, a global
//! score-ranked PR curve, interpolated AP over a fixed recall grid, then the
//! mean over IoU thresholds. Cohort aggregates are unweighted means over
//! member classes; classes with no ground truth in the evaluated subset are
//! excluded rather than scored zero.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, BBox, Dataset, FrequencyCohort};
use crate::error::{Error, Result};

/// One scored box prediction. Serializes in the COCO results format, with
/// `bbox` as an `[x, y, w, h]` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawDetection", into = "RawDetection")]
pub struct Detection {
    pub image_id: i64,
    pub category_id: i64,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Serialize, Deserialize)]
struct RawDetection {
    image_id: i64,
    category_id: i64,
    bbox: [f64; 4],
    score: f64,
}

impl From<RawDetection> for Detection {
    fn from(r: RawDetection) -> Self {
        Detection {
            image_id: r.image_id,
            category_id: r.category_id,
            bbox: BBox { x: r.bbox[0], y: r.bbox[1], w: r.bbox[2], h: r.bbox[3] },
            score: r.score,
        }
    }
}

impl From<Detection> for RawDetection {
    fn from(d: Detection) -> Self {
        RawDetection {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
            score: d.score,
        }
    }
}

/// Parse a COCO results file: a JSON array of detection records.
pub fn parse_predictions(text: &str) -> Result<Vec<Detection>> {
    serde_json::from_str(text).map_err(|e| Error::from_json(e, text))
}

pub fn load_predictions(path: impl AsRef<std::path::Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Strictly increasing IoU thresholds in (0, 1].
    pub iou_thresholds: Vec<f64>,
    /// Per-image detection cap, applied across categories by descending score.
    pub max_dets_per_image: usize,
    /// Size of the interpolation grid over recall `[0, 1]`.
    pub recall_points: usize,
    /// Federated evaluation: class c is scored only on its listed images.
    /// Classes absent from the map are scored on all images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub federated_image_lists: Option<BTreeMap<i64, BTreeSet<i64>>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            max_dets_per_image: 100,
            recall_points: 101,
            federated_image_lists: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::InvalidArgument("iou_thresholds must be non-empty".into()));
        }
        for w in self.iou_thresholds.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidArgument(
                    "iou_thresholds must be strictly increasing".into(),
                ));
            }
        }
        if !self
            .iou_thresholds
            .iter()
            .all(|&t| t > 0.0 && t <= 1.0)
        {
            return Err(Error::InvalidArgument("iou_thresholds must lie in (0, 1]".into()));
        }
        if self.recall_points < 2 {
            return Err(Error::InvalidArgument("recall_points must be >= 2".into()));
        }
        Ok(())
    }
}

/// Cohort aggregates keyed `all`/`many`/`medium`/`few`; `None` when the
/// cohort has no class with ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortAp {
    pub all: Option<f64>,
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// AP per class, averaged over IoU thresholds. Classes with no ground
    /// truth in the evaluated subset are absent.
    pub per_class_ap: BTreeMap<i64, f64>,
    pub cohort_ap: CohortAp,
}

impl EvalResult {
    /// Aligned text table in the All / Many / Med / Few column layout.
    pub fn to_table(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            match v {
                Some(x) => format!("{:>6.3}", x),
                None => format!("{:>6}", "-"),
            }
        }
        let mut s = String::new();
        s.push_str("Average Precision (AP)\n");
        s.push_str(&format!(
            "{:>6} {:>6} {:>6} {:>6}\n",
            "All", "Many", "Med", "Few"
        ));
        s.push_str(&format!(
            "{} {} {} {}\n",
            cell(self.cohort_ap.all),
            cell(self.cohort_ap.many),
            cell(self.cohort_ap.medium),
            cell(self.cohort_ap.few)
        ));
        s
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let x1 = a.x.max(b.x);
    let y1 = a.y.max(b.y);
    let x2 = (a.x + a.w).min(b.x + b.w);
    let y2 = (a.y + a.h).min(b.y + b.h);
    let inter = (x2 - x1).max(0.0) * (y2 - y1).max(0.0);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy TP/FP labeling for detections sharing one (image, category) pair.
///
/// Detections are processed in descending score (ties: input order); each
/// takes the unmatched ground truth of highest IoU at or above the
/// threshold. Labels are returned aligned to the input order of `dets`.
pub fn match_detections(dets: &[Detection], gts: &[Annotation], iou_thresh: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut gt_used = vec![false; gts.len()];
    let mut labels = vec![false; dets.len()];
    for &di in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_used[gi] {
                continue;
            }
            let v = iou(&dets[di].bbox, &gt.bbox);
            if v >= iou_thresh {
                match best {
                    None => best = Some((gi, v)),
                    Some((_, bv)) if v > bv => best = Some((gi, v)),
                    _ => {}
                }
            }
        }
        if let Some((gi, _)) = best {
            gt_used[gi] = true;
            labels[di] = true;
        }
    }
    labels
}

/// Interpolated AP over `recall_points` evenly spaced recall levels.
///
/// `ranked` holds TP/FP labels in global descending-score order. Returns 0
/// when there are no detections; the caller must exclude `n_gt == 0` classes.
pub fn average_precision(ranked: &[bool], n_gt: usize, recall_points: usize) -> f64 {
    if n_gt == 0 || ranked.is_empty() {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (i, &is_tp) in ranked.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // non-increasing precision envelope
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    let step = 1.0 / (recall_points - 1) as f64;
    for p in 0..recall_points {
        let r = p as f64 * step;
        // first ranked position reaching recall >= r
        if let Some(i) = recall.iter().position(|&rv| rv >= r - 1e-12) {
            sum += precision[i];
        }
    }
    sum / recall_points as f64
}

/// Evaluate predictions against a dataset, optionally restricted to a subset
/// of images (e.g. the Few/Medium test subset).
pub fn evaluate(
    d: &Dataset,
    preds: &[Detection],
    cfg: &EvalConfig,
    restrict: Option<&BTreeSet<i64>>,
) -> Result<EvalResult> {
    cfg.validate()?;

    let mut offenders = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        if !d.images().contains_key(&p.image_id) {
            offenders.push(format!("prediction {i} references unknown image {}", p.image_id));
        } else if d.category(p.category_id).is_none() {
            offenders.push(format!(
                "prediction {i} references unknown category {}",
                p.category_id
            ));
        } else if !(p.score.is_finite() && (0.0..=1.0).contains(&p.score)) {
            offenders.push(format!("prediction {i} has invalid score {}", p.score));
        } else if let Err(e) = p.bbox.validate() {
            offenders.push(format!("prediction {i}: {e}"));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Validation(offenders.join("; ")));
    }

    // Per-image cap across categories, by descending score (ties: input order).
    let mut by_image: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        by_image.entry(p.image_id).or_default().push(i);
    }
    let mut kept = vec![false; preds.len()];
    for idxs in by_image.values_mut() {
        idxs.sort_by(|&a, &b| {
            preds[b]
                .score
                .partial_cmp(&preds[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        for &i in idxs.iter().take(cfg.max_dets_per_image) {
            kept[i] = true;
        }
    }

    let class_ids: Vec<i64> = d.category_ids().collect();
    let per_class: Vec<(i64, Option<f64>)> = class_ids
        .par_iter()
        .map(|&c| (c, class_ap(d, preds, &kept, cfg, restrict, c)))
        .collect();

    let mut per_class_ap = BTreeMap::new();
    for (c, ap) in &per_class {
        if let Some(v) = ap {
            per_class_ap.insert(*c, *v);
        }
    }

    let mean_over = |cohort: Option<FrequencyCohort>| -> Option<f64> {
        let vals: Vec<f64> = per_class_ap
            .iter()
            .filter(|(&c, _)| match cohort {
                None => true,
                Some(co) => d.category(c).map(|cat| cat.cohort == co).unwrap_or(false),
            })
            .map(|(_, &v)| v)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    Ok(EvalResult {
        cohort_ap: CohortAp {
            all: mean_over(None),
            many: mean_over(Some(FrequencyCohort::Many)),
            medium: mean_over(Some(FrequencyCohort::Medium)),
            few: mean_over(Some(FrequencyCohort::Few)),
        },
        per_class_ap,
    })
}

fn class_ap(
    d: &Dataset,
    preds: &[Detection],
    kept: &[bool],
    cfg: &EvalConfig,
    restrict: Option<&BTreeSet<i64>>,
    c: i64,
) -> Option<f64> {
    let fed_list = cfg
        .federated_image_lists
        .as_ref()
        .and_then(|m| m.get(&c));
    let image_in_scope = |img: i64| -> bool {
        if let Some(r) = restrict {
            if !r.contains(&img) {
                return false;
            }
        }
        if let Some(f) = fed_list {
            if !f.contains(&img) {
                return false;
            }
        }
        true
    };

    let mut gt_by_image: BTreeMap<i64, Vec<Annotation>> = BTreeMap::new();
    for a in d.annotations() {
        if a.category_id == c && image_in_scope(a.image_id) {
            gt_by_image.entry(a.image_id).or_default().push(a.clone());
        }
    }
    let n_gt: usize = gt_by_image.values().map(Vec::len).sum();
    if n_gt == 0 {
        return None;
    }

    let mut det_by_image: BTreeMap<i64, Vec<(usize, Detection)>> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        if kept[i] && p.category_id == c && image_in_scope(p.image_id) {
            det_by_image.entry(p.image_id).or_default().push((i, p.clone()));
        }
    }

    let empty: Vec<Annotation> = Vec::new();
    let mut ap_sum = 0.0;
    for &t in &cfg.iou_thresholds {
        // Per-image matching, then a global ranking by (score desc, input order).
        let mut ranked: Vec<(f64, usize, bool)> = Vec::new();
        for (img, dets) in &det_by_image {
            let gts = gt_by_image.get(img).unwrap_or(&empty);
            let det_refs: Vec<Detection> = dets.iter().map(|(_, p)| p.clone()).collect();
            let labels = match_detections(&det_refs, gts, t);
            for ((orig, p), tp) in dets.iter().zip(labels) {
                ranked.push((p.score, *orig, tp));
            }
        }
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let labels: Vec<bool> = ranked.iter().map(|&(_, _, tp)| tp).collect();
        ap_sum += average_precision(&labels, n_gt, cfg.recall_points);
    }
    Some(ap_sum / cfg.iou_thresholds.len() as f64)
}
