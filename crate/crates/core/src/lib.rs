//! Offline evaluation toolkit for fine-grained open-vocabulary object
//! detection.
//!
//! Geometry, matching, metrics and post-processing are generic over the
//! coordinate scalar ([`Scalar`]: `f32` or `f64`); the aliases below name the
//! common concrete instantiations.

pub mod datamodel;
pub mod datasettools;
pub mod embedcache;
pub mod error;
pub mod geometry;
pub mod json;
pub mod matching;
pub mod metrics;
pub mod postprocess;
pub mod protocols;
pub mod scalar;
pub mod synth;

pub use datamodel::{
    load_dataset, load_predictions, ClassEntry, Dataset, GroundTruth, ImageRecord, Novelty,
    Prediction, UNK_TOKEN,
};
pub use error::{Error, Result};
pub use geometry::{area, iou, overlap_ratio, BBox};
pub use metrics::{coco_map, EvalReport};
pub use scalar::Scalar;

pub type Box32 = BBox<f32>;
pub type Box64 = BBox<f64>;
pub type Prediction32 = Prediction<f32>;
pub type Prediction64 = Prediction<f64>;
pub type GroundTruth32 = GroundTruth<f32>;
pub type GroundTruth64 = GroundTruth<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Dataset64 = Dataset<f64>;
pub type SuppressionConfig32 = postprocess::SuppressionConfig<f32>;
pub type SuppressionConfig64 = postprocess::SuppressionConfig<f64>;
