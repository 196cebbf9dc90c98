//! Test-only helpers: an independent brute-force PR evaluator and synthetic
//! instance generators. The reference evaluator shares no code with the
//! library's evaluation path.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fsod_core::dataset::{Annotation, BBox, Category, CohortAssignment, Dataset};
use fsod_core::eval::{Detection, EvalConfig};
use fsod_core::rng::SplitMix64;

/// Reference evaluator: per-class AP by explicit enumeration.
///
/// Greedy matching is re-implemented with an explicit sort; AP is computed
/// as the mean over the recall grid of the maximum precision among all
/// ranked cut-offs whose recall reaches the grid point (no envelope pass).
pub fn reference_per_class_ap(
    d: &Dataset,
    preds: &[Detection],
    cfg: &EvalConfig,
    restrict: Option<&BTreeSet<i64>>,
) -> BTreeMap<i64, f64> {
    // per-image cap across categories, descending score, ties by input order
    let mut kept_idx: BTreeSet<usize> = BTreeSet::new();
    let image_ids: BTreeSet<i64> = preds.iter().map(|p| p.image_id).collect();
    for &img in &image_ids {
        let mut idxs: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].image_id == img).collect();
        idxs.sort_by(|&a, &b| {
            preds[b]
                .score
                .partial_cmp(&preds[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        kept_idx.extend(idxs.into_iter().take(cfg.max_dets_per_image));
    }

    let mut out = BTreeMap::new();
    for cat in d.categories() {
        let c = cat.id;
        let in_scope = |img: i64| {
            restrict.map(|r| r.contains(&img)).unwrap_or(true)
                && cfg
                    .federated_image_lists
                    .as_ref()
                    .and_then(|m| m.get(&c))
                    .map(|l| l.contains(&img))
                    .unwrap_or(true)
        };
        let gts: Vec<&Annotation> = d
            .annotations()
            .iter()
            .filter(|a| a.category_id == c && in_scope(a.image_id))
            .collect();
        if gts.is_empty() {
            continue;
        }
        let dets: Vec<usize> = (0..preds.len())
            .filter(|&i| {
                kept_idx.contains(&i) && preds[i].category_id == c && in_scope(preds[i].image_id)
            })
            .collect();

        let mut ap_sum = 0.0;
        for &t in &cfg.iou_thresholds {
            // match per image with an explicit greedy order
            let mut labels: Vec<(f64, usize, bool)> = Vec::new();
            for &img in &image_ids {
                if !in_scope(img) {
                    continue;
                }
                let mut img_dets: Vec<usize> =
                    dets.iter().copied().filter(|&i| preds[i].image_id == img).collect();
                img_dets.sort_by(|&a, &b| {
                    preds[b]
                        .score
                        .partial_cmp(&preds[a].score)
                        .unwrap()
                        .then(a.cmp(&b))
                });
                let img_gts: Vec<&&Annotation> =
                    gts.iter().filter(|g| g.image_id == img).collect();
                let mut used = vec![false; img_gts.len()];
                for &di in &img_dets {
                    let mut best_gi = None;
                    let mut best_iou = -1.0;
                    for (gi, g) in img_gts.iter().enumerate() {
                        if used[gi] {
                            continue;
                        }
                        let v = reference_iou(&preds[di].bbox, &g.bbox);
                        if v >= t && v > best_iou {
                            best_iou = v;
                            best_gi = Some(gi);
                        }
                    }
                    let tp = match best_gi {
                        Some(gi) => {
                            used[gi] = true;
                            true
                        }
                        None => false,
                    };
                    labels.push((preds[di].score, di, tp));
                }
            }
            labels.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

            // explicit PR points
            let n_gt = gts.len() as f64;
            let mut tp = 0.0;
            let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
            for (rank, &(_, _, is_tp)) in labels.iter().enumerate() {
                if is_tp {
                    tp += 1.0;
                }
                points.push((tp / n_gt, tp / (rank as f64 + 1.0)));
            }
            let mut ap = 0.0;
            for p in 0..cfg.recall_points {
                let r = p as f64 / (cfg.recall_points - 1) as f64;
                let best = points
                    .iter()
                    .filter(|&&(rv, _)| rv >= r - 1e-12)
                    .map(|&(_, pv)| pv)
                    .fold(f64::NEG_INFINITY, f64::max);
                if best.is_finite() {
                    ap += best;
                }
            }
            ap_sum += ap / cfg.recall_points as f64;
        }
        out.insert(c, ap_sum / cfg.iou_thresholds.len() as f64);
    }
    out
}

fn reference_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Random evaluation instance: a dataset plus a prediction list.
pub fn random_instance(
    rng: &mut SplitMix64,
    max_images: u64,
    max_classes: u64,
    max_dets_per_image: u64,
) -> (Dataset, Vec<Detection>) {
    let n_images = 1 + rng.next_below(max_images) as i64;
    let n_classes = 1 + rng.next_below(max_classes) as i64;
    let images: Vec<(i64, f64, f64)> = (1..=n_images).map(|i| (i, 200.0, 200.0)).collect();
    let categories: Vec<Category> = (1..=n_classes)
        .map(|c| Category::new(c, format!("c{c}")))
        .collect();

    let mut annotations = Vec::new();
    let mut next = 1i64;
    for img in 1..=n_images {
        for _ in 0..rng.next_below(5) {
            annotations.push(Annotation {
                id: next,
                image_id: img,
                category_id: 1 + rng.next_below(n_classes as u64) as i64,
                bbox: random_box(rng),
            });
            next += 1;
        }
    }
    let d = Dataset::from_parts(images, categories, annotations, CohortAssignment::default())
        .unwrap();

    let mut preds = Vec::new();
    for img in 1..=n_images {
        for _ in 0..rng.next_below(max_dets_per_image + 1) {
            preds.push(Detection {
                image_id: img,
                category_id: 1 + rng.next_below(n_classes as u64) as i64,
                bbox: random_box(rng),
                score: rng.next_f64(),
            });
        }
    }
    (d, preds)
}

fn random_box(rng: &mut SplitMix64) -> BBox {
    BBox {
        x: rng.next_f64() * 150.0,
        y: rng.next_f64() * 150.0,
        w: 5.0 + rng.next_f64() * 50.0,
        h: 5.0 + rng.next_f64() * 50.0,
    }
}

/// Random dataset for split sampling tests.
pub fn random_split_dataset(rng: &mut SplitMix64, seed_tag: u64) -> Dataset {
    let n_images = 10 + rng.next_below(40) as i64;
    let n_classes = 2 + rng.next_below(6) as i64;
    let images: Vec<(i64, f64, f64)> = (1..=n_images).map(|i| (i, 300.0, 300.0)).collect();
    let categories: Vec<Category> = (1..=n_classes)
        .map(|c| Category::new(c, format!("d{seed_tag}_c{c}")))
        .collect();
    let mut annotations = Vec::new();
    let mut next = 1i64;
    for img in 1..=n_images {
        for _ in 0..rng.next_below(6) {
            annotations.push(Annotation {
                id: next,
                image_id: img,
                category_id: 1 + rng.next_below(n_classes as u64) as i64,
                bbox: random_box(rng),
            });
            next += 1;
        }
    }
    Dataset::from_parts(images, categories, annotations, CohortAssignment::default()).unwrap()
}
