//! Dataset and prediction records plus their JSON files.
//!
//! `dataset.json` is COCO-like, with corner-form boxes and caption/novelty
//! metadata on categories:
//!
//! ```json
//! {"images": [{"id", "width", "height", "timestamp"?, "sequence_id"?}],
//!  "categories": [{"id", "name", "caption", "coarse_class_id", "novelty"}],
//!  "annotations": [{"image_id", "bbox": [x_min, y_min, x_max, y_max], "category_id"}]}
//! ```
//!
//! `predictions.json` is a flat array of
//! `{"image_id", "bbox", "score", "token", "caption_class_id"}`.
//!
//! Loading validates every cross reference and clamps boxes into the image.
//! Saving writes canonical JSON (see [`crate::json`]), so loading and saving
//! a canonical file reproduces it byte for byte.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::json::{float, to_canonical_string};
use crate::scalar::Scalar;

/// Token emitted by tokenizers for out-of-vocabulary words.
pub const UNK_TOKEN: &str = "[UNK]";

const IN_MEMORY: &str = "<memory>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Novelty {
    Base,
    Novel,
}

/// A fine-grained class and the single caption describing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u64,
    pub name: String,
    pub caption: String,
    pub coarse_class_id: u64,
    pub novelty: Novelty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T = f64> {
    pub image_id: u64,
    pub bbox: BBox<T>,
    pub class_id: u64,
}

/// One detector output: box, confidence, emitted token and the class whose
/// caption produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T = f64> {
    pub image_id: u64,
    pub bbox: BBox<T>,
    pub score: T,
    pub token: String,
    pub caption_class_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    pub images: Vec<ImageRecord>,
    pub classes: Vec<ClassEntry>,
    pub ground_truth: Vec<GroundTruth<T>>,
}

/// Lowercased alphanumeric words of a caption.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl<T: Scalar> Dataset<T> {
    /// Validates and clamps in-memory records the same way [`load_dataset`] does.
    pub fn from_parts(
        images: Vec<ImageRecord>,
        classes: Vec<ClassEntry>,
        ground_truth: Vec<GroundTruth<T>>,
    ) -> Result<Self> {
        Self::validated(IN_MEMORY, images, classes, ground_truth)
    }

    fn validated(
        path: &str,
        images: Vec<ImageRecord>,
        classes: Vec<ClassEntry>,
        mut ground_truth: Vec<GroundTruth<T>>,
    ) -> Result<Self> {
        let schema = |record: String, message: &str| Error::Schema {
            path: path.to_string(),
            record,
            message: message.to_string(),
        };
        let integrity = |record: String, message: String| Error::Integrity {
            path: path.to_string(),
            record,
            message,
        };

        let mut image_dims = HashMap::new();
        for (i, img) in images.iter().enumerate() {
            let record = format!("images[{i}] (id {})", img.id);
            if img.width == 0 || img.height == 0 {
                return Err(schema(record, "width and height must be positive"));
            }
            if img.timestamp.is_some() != img.sequence_id.is_some() {
                return Err(schema(
                    record,
                    "timestamp and sequence_id must be given together",
                ));
            }
            if img.timestamp.is_some_and(|t| !t.is_finite()) {
                return Err(schema(record, "timestamp must be finite"));
            }
            if image_dims.insert(img.id, (img.width, img.height)).is_some() {
                return Err(integrity(record, format!("duplicate image id {}", img.id)));
            }
        }

        let mut class_ids = HashSet::new();
        for (i, class) in classes.iter().enumerate() {
            let record = format!("categories[{i}] (id {})", class.id);
            if class.caption.trim().is_empty() {
                return Err(schema(record, "caption must be non-empty"));
            }
            if !class_ids.insert(class.id) {
                return Err(integrity(record, format!("duplicate category id {}", class.id)));
            }
        }

        for (i, gt) in ground_truth.iter_mut().enumerate() {
            let record = format!("annotations[{i}]");
            let Some(&(w, h)) = image_dims.get(&gt.image_id) else {
                return Err(integrity(
                    record,
                    format!("image_id {} does not exist", gt.image_id),
                ));
            };
            if !class_ids.contains(&gt.class_id) {
                return Err(integrity(
                    record,
                    format!("category_id {} does not exist", gt.class_id),
                ));
            }
            if !gt.bbox.is_valid() {
                return Err(schema(record, "bbox must be finite with x_max >= x_min, y_max >= y_min"));
            }
            gt.bbox = gt.bbox.clamp_to(T::from(w).unwrap(), T::from(h).unwrap());
        }

        Ok(Self {
            images,
            classes,
            ground_truth,
        })
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|img| img.id == id)
    }

    pub fn class(&self, id: u64) -> Option<&ClassEntry> {
        self.classes.iter().find(|c| c.id == id)
    }

    /// Class ids in ascending order.
    pub fn class_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.classes.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Ground-truth indices keyed by `(image_id, class_id)`, in file order.
    pub fn gt_cells(&self) -> BTreeMap<(u64, u64), Vec<usize>> {
        let mut cells: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
        for (i, gt) in self.ground_truth.iter().enumerate() {
            cells.entry((gt.image_id, gt.class_id)).or_default().push(i);
        }
        cells
    }

    /// Ground-truth indices of one image, in file order.
    pub fn gts_of_image(&self, image_id: u64) -> Vec<usize> {
        self.ground_truth
            .iter()
            .enumerate()
            .filter(|(_, gt)| gt.image_id == image_id)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.clone(),
            classes: self.classes.clone(),
            ground_truth: self
                .ground_truth
                .iter()
                .map(|gt| GroundTruth {
                    image_id: gt.image_id,
                    bbox: gt.bbox.cast(),
                    class_id: gt.class_id,
                })
                .collect(),
        }
    }

    pub fn to_json_value(&self) -> Value {
        let images = self
            .images
            .iter()
            .map(|img| {
                let mut m = Map::new();
                m.insert("id".into(), json!(img.id));
                m.insert("width".into(), json!(img.width));
                m.insert("height".into(), json!(img.height));
                if let Some(t) = img.timestamp {
                    m.insert("timestamp".into(), float(t));
                }
                if let Some(s) = img.sequence_id {
                    m.insert("sequence_id".into(), json!(s));
                }
                Value::Object(m)
            })
            .collect::<Vec<_>>();
        let categories = self
            .classes
            .iter()
            .map(|c| serde_json::to_value(c).expect("class entries serialize"))
            .collect::<Vec<_>>();
        let annotations = self
            .ground_truth
            .iter()
            .map(|gt| {
                json!({
                    "image_id": gt.image_id,
                    "bbox": bbox_value(&gt.bbox),
                    "category_id": gt.class_id,
                })
            })
            .collect::<Vec<_>>();
        json!({
            "images": images,
            "categories": categories,
            "annotations": annotations,
        })
    }

    /// Canonical `dataset.json` text, optionally with extra top-level keys
    /// (for example a run manifest).
    pub fn to_canonical_json(&self, extra: Option<(&str, Value)>) -> String {
        let mut value = self.to_json_value();
        if let (Some((key, v)), Value::Object(m)) = (extra, &mut value) {
            m.insert(key.to_string(), v);
        }
        to_canonical_string(&value)
    }
}

pub(crate) fn bbox_value<T: Scalar>(b: &BBox<T>) -> Value {
    Value::Array(b.to_array().iter().map(|v| float(v.to_f64_exact())).collect())
}

impl<T: Scalar> Prediction<T> {
    pub fn to_json_value(&self) -> Value {
        json!({
            "image_id": self.image_id,
            "bbox": bbox_value(&self.bbox),
            "score": float(self.score.to_f64_exact()),
            "token": self.token,
            "caption_class_id": self.caption_class_id,
        })
    }
}

/// Canonical text of a prediction set, in the `(image_id, caption_class_id)`
/// order that loading produces (stable within a cell).
pub fn predictions_to_canonical_json<T: Scalar>(preds: &[Prediction<T>]) -> String {
    let mut order: Vec<&Prediction<T>> = preds.iter().collect();
    order.sort_by_key(|p| (p.image_id, p.caption_class_id));
    to_canonical_string(&Value::Array(
        order.into_iter().map(Prediction::to_json_value).collect(),
    ))
}

#[derive(Deserialize)]
struct RawDataset {
    images: Vec<Value>,
    categories: Vec<Value>,
    annotations: Vec<Value>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    image_id: u64,
    bbox: [f64; 4],
    category_id: u64,
}

#[derive(Deserialize)]
struct RawPrediction {
    image_id: u64,
    bbox: [f64; 4],
    score: f64,
    token: String,
    caption_class_id: u64,
}

pub(crate) fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn parse_record<R: serde::de::DeserializeOwned>(
    path: &str,
    record: String,
    value: &Value,
) -> Result<R> {
    R::deserialize(value).map_err(|e| Error::Schema {
        path: path.to_string(),
        record,
        message: e.to_string(),
    })
}

pub(crate) fn bbox_from_array<T: Scalar>(a: [f64; 4]) -> BBox<T> {
    let c = T::from_f64_lossy;
    BBox::new(c(a[0]), c(a[1]), c(a[2]), c(a[3]))
}

/// Parses `dataset.json` text; `source` names the file in error messages.
pub fn parse_dataset<T: Scalar>(source: &str, value: &Value) -> Result<Dataset<T>> {
    let raw: RawDataset = parse_record(source, "top level".into(), value)?;
    let images = raw
        .images
        .iter()
        .enumerate()
        .map(|(i, v)| parse_record(source, format!("images[{i}]"), v))
        .collect::<Result<Vec<ImageRecord>>>()?;
    let classes = raw
        .categories
        .iter()
        .enumerate()
        .map(|(i, v)| parse_record(source, format!("categories[{i}]"), v))
        .collect::<Result<Vec<ClassEntry>>>()?;
    let ground_truth = raw
        .annotations
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let a: RawAnnotation = parse_record(source, format!("annotations[{i}]"), v)?;
            Ok(GroundTruth {
                image_id: a.image_id,
                bbox: bbox_from_array(a.bbox),
                class_id: a.category_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::validated(source, images, classes, ground_truth)
}

pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let value = read_json(path)?;
    parse_dataset(&path.display().to_string(), &value)
}

/// Parses a prediction array against `ds`. The result is stably sorted by
/// `(image_id, caption_class_id)`, so each cell is contiguous.
pub fn parse_predictions<T: Scalar>(
    source: &str,
    value: &Value,
    ds: &Dataset<T>,
) -> Result<Vec<Prediction<T>>> {
    let Value::Array(items) = value else {
        return Err(Error::Schema {
            path: source.to_string(),
            record: "top level".into(),
            message: "expected an array of predictions".into(),
        });
    };
    let dims: HashMap<u64, (u32, u32)> = ds
        .images
        .iter()
        .map(|img| (img.id, (img.width, img.height)))
        .collect();
    let class_ids: HashSet<u64> = ds.classes.iter().map(|c| c.id).collect();

    let mut preds = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let record = format!("predictions[{i}]");
        let raw: RawPrediction = parse_record(source, record.clone(), item)?;
        let Some(&(w, h)) = dims.get(&raw.image_id) else {
            return Err(Error::Integrity {
                path: source.to_string(),
                record,
                message: format!("image_id {} does not exist", raw.image_id),
            });
        };
        if !class_ids.contains(&raw.caption_class_id) {
            return Err(Error::Integrity {
                path: source.to_string(),
                record,
                message: format!("caption_class_id {} does not exist", raw.caption_class_id),
            });
        }
        if !raw.score.is_finite() {
            return Err(Error::Schema {
                path: source.to_string(),
                record,
                message: "score must be finite".into(),
            });
        }
        if raw.score < 0.0 {
            return Err(Error::NegativeScore {
                path: source.to_string(),
                record,
                score: raw.score,
            });
        }
        let bbox: BBox<T> = bbox_from_array(raw.bbox);
        if !bbox.is_valid() {
            return Err(Error::Schema {
                path: source.to_string(),
                record,
                message: "bbox must be finite with x_max >= x_min, y_max >= y_min".into(),
            });
        }
        preds.push(Prediction {
            image_id: raw.image_id,
            bbox: bbox.clamp_to(T::from(w).unwrap(), T::from(h).unwrap()),
            score: T::from_f64_lossy(raw.score),
            token: raw.token,
            caption_class_id: raw.caption_class_id,
        });
    }
    preds.sort_by_key(|p| (p.image_id, p.caption_class_id));
    Ok(preds)
}

pub fn load_predictions<T: Scalar>(
    path: impl AsRef<Path>,
    ds: &Dataset<T>,
) -> Result<Vec<Prediction<T>>> {
    let path = path.as_ref();
    let value = read_json(path)?;
    parse_predictions(&path.display().to_string(), &value, ds)
}

/// Predictions per `(image_id, caption_class_id)` cell, input order kept.
pub fn group_predictions<T: Scalar>(
    preds: &[Prediction<T>],
) -> BTreeMap<(u64, u64), Vec<Prediction<T>>> {
    let mut cells: BTreeMap<(u64, u64), Vec<Prediction<T>>> = BTreeMap::new();
    for p in preds {
        cells
            .entry((p.image_id, p.caption_class_id))
            .or_default()
            .push(p.clone());
    }
    cells
}
