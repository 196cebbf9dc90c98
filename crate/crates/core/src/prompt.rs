//! Synonym-averaged class embeddings and dot-product region classification.
//!
//! Class embeddings are the unit-normalized mean of the (unit-normalized)
//! synonym embeddings. Region features are normalized before scoring, so
//! positive rescaling of a feature never changes its scores.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    /// Normalize on construction; zero or non-finite vectors are rejected.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("embedding has non-finite entries".into()));
        }
        let norm = norm(&values);
        if norm < 1e-9 {
            return Err(Error::Validation("embedding has (near-)zero norm".into()));
        }
        if (norm - 1.0).abs() < 1e-12 {
            // already unit within tolerance; keep bits stable
            return Ok(EmbeddingVector(values));
        }
        Ok(EmbeddingVector(values.iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// class name → ordered synonym list (always contains the name itself).
pub type SynonymTable = BTreeMap<String, Vec<String>>;

pub fn load_synonym_table(path: impl AsRef<Path>) -> Result<SynonymTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: SynonymTable =
        serde_json::from_str(&text).map_err(|e| Error::from_json(e, &text))?;
    for (class, syns) in &table {
        if syns.is_empty() {
            return Err(Error::Validation(format!(
                "class {class:?} has an empty synonym list"
            )));
        }
    }
    Ok(table)
}

/// Load a token → vector JSON map; all vectors must share one dimension and
/// are normalized on load.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<BTreeMap<String, EmbeddingVector>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text)
}

pub fn parse_embeddings(text: &str) -> Result<BTreeMap<String, EmbeddingVector>> {
    let raw: BTreeMap<String, Vec<f64>> =
        serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (token, values) in raw {
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Validation(format!(
                    "embedding for {token:?} has dimension {} but expected {d}",
                    values.len()
                )));
            }
            _ => {}
        }
        let v = EmbeddingVector::new(values)
            .map_err(|e| Error::Validation(format!("token {token:?}: {e}")))?;
        out.insert(token, v);
    }
    Ok(out)
}

/// Unit-normalized mean of a class's synonym embeddings.
pub fn class_embedding(
    class: &str,
    synonyms: &SynonymTable,
    embeddings: &BTreeMap<String, EmbeddingVector>,
) -> Result<EmbeddingVector> {
    let default = vec![class.to_string()];
    let syns = synonyms.get(class).unwrap_or(&default);
    let mut mean: Option<Vec<f64>> = None;
    for s in syns {
        let e = embeddings
            .get(s)
            .ok_or_else(|| Error::Validation(format!("missing embedding for synonym {s:?}")))?;
        match &mut mean {
            None => mean = Some(e.0.clone()),
            Some(m) => {
                if m.len() != e.dim() {
                    return Err(Error::Validation(format!(
                        "synonym {s:?} dimension mismatch"
                    )));
                }
                for (a, b) in m.iter_mut().zip(&e.0) {
                    *a += b;
                }
            }
        }
    }
    let mut mean = mean.ok_or_else(|| Error::Validation(format!("class {class:?} has no synonyms")))?;
    for v in &mut mean {
        *v /= syns.len() as f64;
    }
    if norm(&mean) < 1e-9 {
        return Err(Error::Validation(format!(
            "class {class:?}: synonym embeddings cancel to a degenerate mean"
        )));
    }
    EmbeddingVector::new(mean)
}

/// C x D matrix of unit-norm class embeddings, rows in the given class order.
#[derive(Debug, Clone)]
pub struct ClassifierMatrix {
    pub class_ids: Vec<i64>,
    rows: Vec<EmbeddingVector>,
}

impl ClassifierMatrix {
    /// Build from `(class id, class name)` pairs in dataset category order.
    pub fn build(
        classes: &[(i64, String)],
        synonyms: &SynonymTable,
        embeddings: &BTreeMap<String, EmbeddingVector>,
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(classes.len());
        for (_, name) in classes {
            rows.push(class_embedding(name, synonyms, embeddings)?);
        }
        Ok(ClassifierMatrix {
            class_ids: classes.iter().map(|(id, _)| *id).collect(),
            rows,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &EmbeddingVector {
        &self.rows[i]
    }
}

/// Per-region sigmoid scores against every class, plus the argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScores {
    pub scores: Vec<f64>,
    pub argmax: usize,
    pub max_score: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// score[r][c] = sigmoid(<normalized feature_r, class_c> / temperature).
pub fn classify(
    region_features: &[Vec<f64>],
    matrix: &ClassifierMatrix,
    temperature: f64,
) -> Result<Vec<RegionScores>> {
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut out = Vec::with_capacity(region_features.len());
    for (i, f) in region_features.iter().enumerate() {
        let f = EmbeddingVector::new(f.clone())
            .map_err(|e| Error::Validation(format!("region {i}: {e}")))?;
        if matrix.num_classes() > 0 && matrix.row(0).dim() != f.dim() {
            return Err(Error::InvalidArgument(format!(
                "region {i} has dimension {} but classifier expects {}",
                f.dim(),
                matrix.row(0).dim()
            )));
        }
        let mut scores = Vec::with_capacity(matrix.num_classes());
        let mut argmax = 0;
        let mut max_score = f64::NEG_INFINITY;
        for c in 0..matrix.num_classes() {
            let s = sigmoid(dot(&f.0, &matrix.row(c).0) / temperature);
            if s > max_score {
                max_score = s;
                argmax = c;
            }
            scores.push(s);
        }
        out.push(RegionScores { scores, argmax, max_score });
    }
    Ok(out)
}
