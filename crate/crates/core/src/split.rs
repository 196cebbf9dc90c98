//! K-shot split sampling, test-subset construction, and composite best splits.
//!
//! Sampling walks categories in ascending id, one image draw per category per
//! pass (round-robin). For the current category it picks uniformly among
//! images that contain the category and have not been drawn for it yet. If
//! the image's instance count for the category fits the remaining budget, all
//! of those instances are credited; otherwise the image is set aside. When no
//! remaining image fits the residual budget but uncredited instances exist,
//! one set-aside image is drawn and exactly the residual number of its
//! instances are credited, so classes with at least K instances always end at
//! exactly K. Classes with fewer than K instances are credited in full and
//! flagged as shortfall.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FrequencyCohort};
use crate::error::{Error, Result};
use crate::rng::{SplitMix64, ALGORITHM_ID};

/// Per-class AP table used to assemble best splits.
pub type PerClassAp = BTreeMap<i64, f64>;

/// A K-shot training split over a source dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub k: u32,
    pub seed: u64,
    /// Generator identifier, [`ALGORITHM_ID`] for sampled splits.
    pub rng: String,
    pub dataset_digest: String,
    /// Selected image ids in selection order (duplicates never appear).
    pub images: Vec<i64>,
    /// category id → annotation ids credited toward that class's budget.
    pub credited: BTreeMap<i64, Vec<i64>>,
    /// category id → number actually credited, for classes with fewer than K
    /// instances in the source dataset.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub shortfall: BTreeMap<i64, u64>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let images: BTreeSet<i64> = self.images.iter().copied().collect();
        if images.len() != self.images.len() {
            return Err(Error::Validation("split contains duplicate image ids".into()));
        }
        for (&cat, anns) in &self.credited {
            for &a in anns {
                if !seen.insert(a) {
                    return Err(Error::Validation(format!(
                        "annotation {a} credited twice"
                    )));
                }
            }
            let n = anns.len() as u64;
            match self.shortfall.get(&cat) {
                Some(&s) => {
                    if s != n || n >= u64::from(self.k) {
                        return Err(Error::Validation(format!(
                            "class {cat}: shortfall flag {s} inconsistent with {n} credited (k={})",
                            self.k
                        )));
                    }
                }
                None => {
                    if n != u64::from(self.k) {
                        return Err(Error::Validation(format!(
                            "class {cat}: {n} credited but k={} and no shortfall flag",
                            self.k
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Validate against the source dataset: containment and image membership.
    pub fn validate_against(&self, d: &Dataset) -> Result<()> {
        self.validate()?;
        if self.dataset_digest != d.digest() {
            return Err(Error::Validation("split digest does not match dataset".into()));
        }
        let images: BTreeSet<i64> = self.images.iter().copied().collect();
        for anns in self.credited.values() {
            for &a in anns {
                let ann = d
                    .annotation_by_id(a)
                    .ok_or_else(|| Error::Validation(format!("credited annotation {a} not in dataset")))?;
                if !images.contains(&ann.image_id) {
                    return Err(Error::Validation(format!(
                        "annotation {a} credited but its image {} is not in the split",
                        ann.image_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sample a deterministic K-shot split. Identical `(dataset, k, seed)`
/// produce identical output.
pub fn sample_kshot_split(d: &Dataset, k: u32, seed: u64) -> Result<SplitSpec> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let cats: Vec<i64> = d.category_ids().collect();

    let mut budget: BTreeMap<i64, u64> = cats.iter().map(|&c| (c, u64::from(k))).collect();
    // Per class: images still drawable, and images set aside for overshoot.
    let mut candidates: BTreeMap<i64, Vec<i64>> =
        cats.iter().map(|&c| (c, d.images_with_class(c))).collect();
    let mut set_aside: BTreeMap<i64, Vec<i64>> = BTreeMap::new();

    let mut images: Vec<i64> = Vec::new();
    let mut image_set: BTreeSet<i64> = BTreeSet::new();
    let mut credited: BTreeMap<i64, Vec<i64>> = BTreeMap::new();

    let select_image = |images: &mut Vec<i64>, image_set: &mut BTreeSet<i64>, id: i64| {
        if image_set.insert(id) {
            images.push(id);
        }
    };

    // Round-robin passes, one draw per class per pass.
    loop {
        let mut progressed = false;
        for &c in &cats {
            if budget[&c] == 0 {
                continue;
            }
            let pool = candidates.get_mut(&c).unwrap();
            if pool.is_empty() {
                continue;
            }
            progressed = true;
            let idx = rng.next_below(pool.len() as u64) as usize;
            let img = pool.remove(idx);
            let anns = d.annotations_for(c, img);
            if anns.len() as u64 <= budget[&c] {
                *budget.get_mut(&c).unwrap() -= anns.len() as u64;
                credited
                    .entry(c)
                    .or_default()
                    .extend(anns.iter().map(|a| a.id));
                select_image(&mut images, &mut image_set, img);
            } else {
                set_aside.entry(c).or_default().push(img);
            }
        }
        if !progressed {
            break;
        }
    }

    // Top-up: every set-aside image holds more instances than the residual
    // budget, so one image closes the class exactly.
    let mut shortfall = BTreeMap::new();
    for &c in &cats {
        let remaining = budget[&c];
        if remaining == 0 {
            continue;
        }
        let aside = set_aside.remove(&c).unwrap_or_default();
        if aside.is_empty() {
            // Fewer than K instances exist in total.
            let n = credited.get(&c).map(|v| v.len() as u64).unwrap_or(0);
            shortfall.insert(c, n);
            continue;
        }
        let img = aside[rng.next_below(aside.len() as u64) as usize];
        let mut ids: Vec<i64> = d.annotations_for(c, img).iter().map(|a| a.id).collect();
        // Partial Fisher-Yates to pick `remaining` distinct instances.
        for i in 0..remaining as usize {
            let j = i + rng.next_below((ids.len() - i) as u64) as usize;
            ids.swap(i, j);
        }
        ids.truncate(remaining as usize);
        credited.entry(c).or_default().extend(ids);
        select_image(&mut images, &mut image_set, img);
    }

    let spec = SplitSpec {
        k,
        seed,
        rng: ALGORITHM_ID.to_string(),
        dataset_digest: d.digest(),
        images,
        credited,
        shortfall,
    };
    spec.validate()?;
    Ok(spec)
}

/// Validation images holding at least one `Few` or `Medium` cohort annotation.
pub fn build_test_subset(val: &Dataset) -> BTreeSet<i64> {
    let rare: BTreeSet<i64> = val
        .categories()
        .filter(|c| matches!(c.cohort, FrequencyCohort::Few | FrequencyCohort::Medium))
        .map(|c| c.id)
        .collect();
    val.annotations()
        .iter()
        .filter(|a| rare.contains(&a.category_id))
        .map(|a| a.image_id)
        .collect()
}

/// Assemble a composite split taking each class's credited annotations from
/// the candidate with the highest AP for that class (ties: lowest index).
///
/// The dataset is needed to map credited annotations back to their images.
pub fn best_split(d: &Dataset, candidates: &[(SplitSpec, PerClassAp)]) -> Result<SplitSpec> {
    let (first, _) = candidates
        .first()
        .ok_or_else(|| Error::InvalidArgument("best_split requires at least one candidate".into()))?;
    for (s, _) in candidates {
        if s.k != first.k {
            return Err(Error::InvalidArgument(
                "best_split candidates must share k".into(),
            ));
        }
        if s.dataset_digest != first.dataset_digest {
            return Err(Error::InvalidArgument(
                "best_split candidates must share a source dataset".into(),
            ));
        }
    }

    let mut classes: BTreeSet<i64> = BTreeSet::new();
    for (s, _) in candidates {
        classes.extend(s.credited.keys());
    }

    let mut images: Vec<i64> = Vec::new();
    let mut image_set: BTreeSet<i64> = BTreeSet::new();
    let mut credited = BTreeMap::new();
    let mut shortfall = BTreeMap::new();
    for c in classes {
        let mut winner: Option<(usize, f64)> = None;
        for (i, (s, ap)) in candidates.iter().enumerate() {
            if !s.credited.contains_key(&c) {
                continue;
            }
            let v = ap.get(&c).copied().unwrap_or(f64::NEG_INFINITY);
            match winner {
                None => winner = Some((i, v)),
                Some((_, bv)) if v > bv => winner = Some((i, v)),
                _ => {}
            }
        }
        let (src, _) = &candidates[winner.expect("class came from some candidate").0];
        let anns = src.credited[&c].clone();
        for &a in &anns {
            let ann = d
                .annotation_by_id(a)
                .ok_or_else(|| Error::Validation(format!("credited annotation {a} not in dataset")))?;
            if image_set.insert(ann.image_id) {
                images.push(ann.image_id);
            }
        }
        credited.insert(c, anns);
        if let Some(&s) = src.shortfall.get(&c) {
            shortfall.insert(c, s);
        }
    }

    Ok(SplitSpec {
        k: first.k,
        seed: 0,
        rng: "best-split".to_string(),
        dataset_digest: first.dataset_digest.clone(),
        images,
        credited,
        shortfall,
    })
}

pub fn write_split(path: impl AsRef<Path>, split: &SplitSpec) -> Result<()> {
    let path = path.as_ref();
    split.validate()?;
    let text = serde_json::to_string_pretty(split).expect("serialization cannot fail");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let split: SplitSpec =
        serde_json::from_str(&text).map_err(|e| Error::from_json(e, &text))?;
    split.validate()?;
    Ok(split)
}
