//! COCO-style dataset parsing, validation, indexing, and frequency cohorts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Axis-aligned box in COCO `x, y, w, h` pixel convention (`x, y` = top-left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite())
        {
            return Err(Error::Validation(format!("non-finite bbox {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Validation(format!(
                "bbox must have positive extent, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Clamp into `[0,width] x [0,height]`. Returns `true` if anything moved.
    pub fn clamp_to(&mut self, width: f64, height: f64) -> Result<bool> {
        let orig = *self;
        let x2 = (self.x + self.w).clamp(0.0, width);
        let y2 = (self.y + self.h).clamp(0.0, height);
        self.x = self.x.clamp(0.0, width);
        self.y = self.y.clamp(0.0, height);
        self.w = x2 - self.x;
        self.h = y2 - self.y;
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Validation(format!(
                "bbox {orig:?} lies entirely outside image {width}x{height}"
            )));
        }
        Ok(*self != orig)
    }
}

/// Frequency cohort of a category, by training-set cardinality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyCohort {
    Many,
    Medium,
    Few,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: i64,
    pub name: String,
    /// Synonym strings used for prompt averaging; always contains the name.
    pub synonyms: Vec<String>,
    pub cohort: FrequencyCohort,
}

impl Category {
    pub fn new(id: i64, name: impl Into<String>) -> Self {
        let name = name.into();
        Category {
            id,
            synonyms: vec![name.clone()],
            name,
            cohort: FrequencyCohort::Few,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: i64,
    pub image_id: i64,
    pub category_id: i64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub width: f64,
    pub height: f64,
}

/// Count thresholds for deriving cohorts when no explicit map is supplied.
///
/// `Many` if count >= `many_min`, `Medium` if `medium_min <= count < many_min`,
/// else `Few`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortThresholds {
    pub many_min: u64,
    pub medium_min: u64,
}

impl Default for CohortThresholds {
    fn default() -> Self {
        // LVIS-style boundaries; configurable because the source protocol
        // never publishes numeric cohort cut-offs.
        CohortThresholds {
            many_min: 100,
            medium_min: 10,
        }
    }
}

impl CohortThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.many_min > self.medium_min && self.medium_min > 0) {
            return Err(Error::InvalidArgument(format!(
                "cohort thresholds require many_min > medium_min > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn cohort_for(&self, count: u64) -> FrequencyCohort {
        if count >= self.many_min {
            FrequencyCohort::Many
        } else if count >= self.medium_min {
            FrequencyCohort::Medium
        } else {
            FrequencyCohort::Few
        }
    }
}

/// Explicit category-name → cohort map; authoritative when present.
pub type CohortConfig = BTreeMap<String, FrequencyCohort>;

pub fn load_cohort_config(path: impl AsRef<Path>) -> Result<CohortConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::from_json(e, &text))
}

/// How cohorts are assigned at load time.
#[derive(Debug, Clone)]
pub enum CohortAssignment {
    Explicit(CohortConfig),
    Thresholds(CohortThresholds),
}

impl Default for CohortAssignment {
    fn default() -> Self {
        CohortAssignment::Thresholds(CohortThresholds::default())
    }
}

// Raw COCO file schema.
#[derive(Debug, Deserialize, Serialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CocoImage {
    id: i64,
    width: f64,
    height: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct CocoAnnotation {
    id: i64,
    image_id: i64,
    category_id: i64,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iscrowd: Option<i64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CocoCategory {
    id: i64,
    name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    synonyms: Vec<String>,
}

/// Immutable, fully indexed dataset. Safe for concurrent reads.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: BTreeMap<i64, ImageInfo>,
    categories: BTreeMap<i64, Category>,
    annotations: Vec<Annotation>,
    counts: BTreeMap<i64, u64>,
    // category -> image -> indices into `annotations`
    by_class_image: BTreeMap<i64, BTreeMap<i64, Vec<usize>>>,
    ann_by_id: BTreeMap<i64, usize>,
    warnings: Vec<String>,
}

impl Dataset {
    /// Parse and validate a COCO-style JSON annotation file.
    pub fn load(path: impl AsRef<Path>, cohorts: CohortAssignment) -> Result<Dataset> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, cohorts)
    }

    pub fn from_json(text: &str, cohorts: CohortAssignment) -> Result<Dataset> {
        let raw: CocoFile =
            serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
        let images: Vec<(i64, f64, f64)> =
            raw.images.iter().map(|i| (i.id, i.width, i.height)).collect();
        let mut categories = Vec::with_capacity(raw.categories.len());
        for c in &raw.categories {
            let mut cat = Category::new(c.id, c.name.clone());
            if !c.synonyms.is_empty() {
                cat.synonyms = c.synonyms.clone();
                if !cat.synonyms.contains(&cat.name) {
                    cat.synonyms.insert(0, cat.name.clone());
                }
            }
            categories.push(cat);
        }
        let mut annotations = Vec::with_capacity(raw.annotations.len());
        for a in &raw.annotations {
            if a.iscrowd.unwrap_or(0) != 0 {
                return Err(Error::Validation(format!(
                    "crowd annotations are not supported (annotation {})",
                    a.id
                )));
            }
            annotations.push(Annotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: BBox {
                    x: a.bbox[0],
                    y: a.bbox[1],
                    w: a.bbox[2],
                    h: a.bbox[3],
                },
            });
        }
        Self::from_parts(images, categories, annotations, cohorts)
    }

    /// Build and validate a dataset from in-memory parts.
    pub fn from_parts(
        images: Vec<(i64, f64, f64)>,
        categories: Vec<Category>,
        mut annotations: Vec<Annotation>,
        cohorts: CohortAssignment,
    ) -> Result<Dataset> {
        let mut image_map = BTreeMap::new();
        for (id, width, height) in images {
            if image_map.insert(id, ImageInfo { width, height }).is_some() {
                return Err(Error::Validation(format!("duplicate image id {id}")));
            }
        }
        let mut cat_map = BTreeMap::new();
        for c in categories {
            if c.name.is_empty() {
                return Err(Error::Validation(format!("category {} has empty name", c.id)));
            }
            let id = c.id;
            if cat_map.insert(id, c).is_some() {
                return Err(Error::Validation(format!("duplicate category id {id}")));
            }
        }

        let mut warnings = Vec::new();
        let mut seen_ann = BTreeSet::new();
        let mut dangling = Vec::new();
        for a in &mut annotations {
            if !seen_ann.insert(a.id) {
                return Err(Error::Validation(format!("duplicate annotation id {}", a.id)));
            }
            let img = match image_map.get(&a.image_id) {
                Some(i) => i,
                None => {
                    dangling.push(format!("annotation {} references missing image {}", a.id, a.image_id));
                    continue;
                }
            };
            if !cat_map.contains_key(&a.category_id) {
                dangling.push(format!(
                    "annotation {} references missing category {}",
                    a.id, a.category_id
                ));
                continue;
            }
            a.bbox.validate()?;
            if a.bbox.clamp_to(img.width, img.height)? {
                warnings.push(format!(
                    "annotation {} bbox clamped to image bounds", a.id
                ));
            }
        }
        if !dangling.is_empty() {
            return Err(Error::Validation(dangling.join("; ")));
        }

        let mut counts: BTreeMap<i64, u64> = cat_map.keys().map(|&id| (id, 0)).collect();
        let mut by_class_image: BTreeMap<i64, BTreeMap<i64, Vec<usize>>> = BTreeMap::new();
        let mut ann_by_id = BTreeMap::new();
        for (idx, a) in annotations.iter().enumerate() {
            *counts.get_mut(&a.category_id).unwrap() += 1;
            by_class_image
                .entry(a.category_id)
                .or_default()
                .entry(a.image_id)
                .or_default()
                .push(idx);
            ann_by_id.insert(a.id, idx);
        }

        let mut d = Dataset {
            images: image_map,
            categories: cat_map,
            annotations,
            counts,
            by_class_image,
            ann_by_id,
            warnings,
        };
        match cohorts {
            CohortAssignment::Explicit(map) => d.apply_cohort_config(&map)?,
            CohortAssignment::Thresholds(t) => d.assign_cohorts(t)?,
        }
        Ok(d)
    }

    /// Re-derive cohorts from per-class counts.
    pub fn assign_cohorts(&mut self, thresholds: CohortThresholds) -> Result<()> {
        thresholds.validate()?;
        for (id, cat) in self.categories.iter_mut() {
            cat.cohort = thresholds.cohort_for(self.counts[id]);
        }
        Ok(())
    }

    /// Apply an explicit name → cohort map. Names absent from the map fall
    /// back to default thresholds.
    pub fn apply_cohort_config(&mut self, config: &CohortConfig) -> Result<()> {
        let fallback = CohortThresholds::default();
        for (id, cat) in self.categories.iter_mut() {
            cat.cohort = match config.get(&cat.name) {
                Some(&c) => c,
                None => fallback.cohort_for(self.counts[id]),
            };
        }
        Ok(())
    }

    pub fn images(&self) -> &BTreeMap<i64, ImageInfo> {
        &self.images
    }

    pub fn categories(&self) -> impl Iterator<Item = &Category> {
        self.categories.values()
    }

    pub fn category(&self, id: i64) -> Option<&Category> {
        self.categories.get(&id)
    }

    pub fn category_ids(&self) -> impl Iterator<Item = i64> + '_ {
        self.categories.keys().copied()
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn annotation_by_id(&self, id: i64) -> Option<&Annotation> {
        self.ann_by_id.get(&id).map(|&i| &self.annotations[i])
    }

    /// Per-class annotation counts over the whole dataset.
    pub fn class_frequencies(&self) -> &BTreeMap<i64, u64> {
        &self.counts
    }

    /// Image ids containing at least one instance of `category_id`, ascending.
    pub fn images_with_class(&self, category_id: i64) -> Vec<i64> {
        self.by_class_image
            .get(&category_id)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    /// Annotations of `category_id` on `image_id`, in input order.
    pub fn annotations_for(&self, category_id: i64, image_id: i64) -> Vec<&Annotation> {
        self.by_class_image
            .get(&category_id)
            .and_then(|m| m.get(&image_id))
            .map(|v| v.iter().map(|&i| &self.annotations[i]).collect())
            .unwrap_or_default()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// COCO-style JSON serialization (images/annotations/categories arrays).
    pub fn to_coco_json(&self) -> String {
        let file = CocoFile {
            images: self
                .images
                .iter()
                .map(|(&id, i)| CocoImage {
                    id,
                    width: i.width,
                    height: i.height,
                })
                .collect(),
            annotations: self
                .annotations
                .iter()
                .map(|a| CocoAnnotation {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.category_id,
                    bbox: [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                    iscrowd: None,
                })
                .collect(),
            categories: self
                .categories
                .values()
                .map(|c| CocoCategory {
                    id: c.id,
                    name: c.name.clone(),
                    synonyms: c.synonyms.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("serialization cannot fail")
    }

    /// SHA-256 over a canonical encoding; identifies the dataset in split files.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (&id, img) in &self.images {
            h.update(format!("i{id}:{}:{}|", img.width, img.height));
        }
        for c in self.categories.values() {
            h.update(format!("c{}:{}|", c.id, c.name));
        }
        for a in &self.annotations {
            h.update(format!(
                "a{}:{}:{}:{}:{}:{}:{}|",
                a.id, a.image_id, a.category_id, a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h
            ));
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(id: i64, name: &str) -> Category {
        Category::new(id, name)
    }

    fn ann(id: i64, image: i64, class: i64) -> Annotation {
        Annotation {
            id,
            image_id: image,
            category_id: class,
            bbox: BBox { x: 1.0, y: 1.0, w: 10.0, h: 10.0 },
        }
    }

    #[test]
    fn load_counts_and_cohorts() {
        let json = r#"{
            "images": [{"id": 1, "width": 100, "height": 100}],
            "annotations": [
                {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0,0,10,10]},
                {"id": 2, "image_id": 1, "category_id": 1, "bbox": [5,5,10,10]}
            ],
            "categories": [{"id": 1, "name": "car"}, {"id": 2, "name": "debris"}]
        }"#;
        let d = Dataset::from_json(json, CohortAssignment::default()).unwrap();
        assert_eq!(d.class_frequencies()[&1], 2);
        assert_eq!(d.class_frequencies()[&2], 0);
        assert_eq!(d.category(1).unwrap().cohort, FrequencyCohort::Few);
    }

    #[test]
    fn eighteen_categories() {
        let cats: Vec<Category> = (1..=18).map(|i| cat(i, &format!("c{i}"))).collect();
        let d = Dataset::from_parts(
            vec![(1, 100.0, 100.0)],
            cats,
            vec![],
            CohortAssignment::default(),
        )
        .unwrap();
        assert_eq!(d.categories().count(), 18);
        assert!(d.class_frequencies().values().all(|&c| c == 0));
    }

    #[test]
    fn dangling_image_reference_is_named() {
        let err = Dataset::from_parts(
            vec![(1, 100.0, 100.0)],
            vec![cat(1, "car")],
            vec![ann(7, 99, 1)],
            CohortAssignment::default(),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("annotation 7"), "{msg}");
        assert!(msg.contains("image 99"), "{msg}");
    }

    #[test]
    fn oversized_bbox_clamped_with_warning() {
        let a = Annotation {
            id: 1,
            image_id: 1,
            category_id: 1,
            bbox: BBox { x: 90.0, y: 0.0, w: 30.0, h: 10.0 },
        };
        let d = Dataset::from_parts(
            vec![(1, 100.0, 100.0)],
            vec![cat(1, "car")],
            vec![a],
            CohortAssignment::default(),
        )
        .unwrap();
        assert_eq!(d.annotations()[0].bbox.w, 10.0);
        assert_eq!(d.warnings().len(), 1);
    }

    #[test]
    fn threshold_rule() {
        let t = CohortThresholds { many_min: 50, medium_min: 5 };
        assert_eq!(t.cohort_for(100), FrequencyCohort::Many);
        assert_eq!(t.cohort_for(10), FrequencyCohort::Medium);
        assert_eq!(t.cohort_for(1), FrequencyCohort::Few);
        assert_eq!(t.cohort_for(0), FrequencyCohort::Few);
    }

    #[test]
    fn bad_thresholds_rejected() {
        let t = CohortThresholds { many_min: 5, medium_min: 5 };
        assert!(t.validate().is_err());
    }

    #[test]
    fn explicit_cohort_config_wins() {
        let mut d = Dataset::from_parts(
            vec![(1, 100.0, 100.0)],
            vec![cat(1, "car")],
            vec![ann(1, 1, 1)],
            CohortAssignment::default(),
        )
        .unwrap();
        let mut cfg = CohortConfig::new();
        cfg.insert("car".into(), FrequencyCohort::Many);
        d.apply_cohort_config(&cfg).unwrap();
        assert_eq!(d.category(1).unwrap().cohort, FrequencyCohort::Many);
    }

    #[test]
    fn coco_round_trip() {
        let d = Dataset::from_parts(
            vec![(1, 100.0, 100.0), (2, 50.0, 60.0)],
            vec![cat(1, "car"), cat(2, "bicycle")],
            vec![ann(1, 1, 1), ann(2, 2, 2)],
            CohortAssignment::default(),
        )
        .unwrap();
        let d2 = Dataset::from_json(&d.to_coco_json(), CohortAssignment::default()).unwrap();
        assert_eq!(d.digest(), d2.digest());
    }
}
