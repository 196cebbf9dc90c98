//! Synthetic data generators shared by the criterion benches.

use fsod_core::dataset::{Annotation, BBox, Category, CohortAssignment, Dataset};
use fsod_core::eval::Detection;
use fsod_core::rng::SplitMix64;

/// Random dataset with `n_images` images and `n_classes` classes, a handful
/// of annotations per image.
pub fn synthetic_dataset(n_images: i64, n_classes: i64, seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let images: Vec<(i64, f64, f64)> = (1..=n_images).map(|i| (i, 640.0, 480.0)).collect();
    let categories: Vec<Category> = (1..=n_classes)
        .map(|c| Category::new(c, format!("class_{c}")))
        .collect();
    let mut annotations = Vec::new();
    let mut next_id = 1i64;
    for img in 1..=n_images {
        let n = 1 + rng.next_below(5) as usize;
        for _ in 0..n {
            let x = rng.next_f64() * 500.0;
            let y = rng.next_f64() * 350.0;
            annotations.push(Annotation {
                id: next_id,
                image_id: img,
                category_id: 1 + rng.next_below(n_classes as u64) as i64,
                bbox: BBox { x, y, w: 20.0 + rng.next_f64() * 100.0, h: 20.0 + rng.next_f64() * 100.0 },
            });
            next_id += 1;
        }
    }
    Dataset::from_parts(images, categories, annotations, CohortAssignment::default()).unwrap()
}

/// Noisy predictions derived from the dataset's ground truth.
pub fn synthetic_predictions(d: &Dataset, seed: u64) -> Vec<Detection> {
    let mut rng = SplitMix64::new(seed);
    d.annotations()
        .iter()
        .map(|a| {
            let jitter = rng.next_f64() * 8.0 - 4.0;
            Detection {
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: BBox {
                    x: (a.bbox.x + jitter).max(0.0),
                    y: (a.bbox.y + jitter).max(0.0),
                    w: a.bbox.w,
                    h: a.bbox.h,
                },
                score: rng.next_f64(),
            }
        })
        .collect()
}
