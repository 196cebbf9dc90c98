//! Benchmarking toolkit for foundational few-shot object detection:
//! exact-K split sampling, cohort-aware average precision, federated loss
//! mathematics, and synonym-averaged prompt classification.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod fedloss;
pub mod prompt;
pub mod rng;
pub mod split;

pub use dataset::{
    Annotation, BBox, Category, CohortAssignment, CohortConfig, CohortThresholds, Dataset,
    FrequencyCohort,
};
pub use error::{Error, Result};
pub use eval::{evaluate, iou, CohortAp, Detection, EvalConfig, EvalResult};
pub use fedloss::{
    federated_bce, finite_difference_check, get_negatives, pseudo_positive_filter,
    sample_fedloss_subset, select_classes, ClassSubset, LogitMatrix, LossReport, Provenance,
    TargetMatrix,
};
pub use prompt::{classify, class_embedding, ClassifierMatrix, EmbeddingVector, SynonymTable};
pub use split::{
    best_split, build_test_subset, read_split, sample_kshot_split, write_split, PerClassAp,
    SplitSpec,
};
