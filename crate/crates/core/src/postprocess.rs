//! Caption-level post-processing for open-vocabulary detector output.
//!
//! Each caption's predictions are first filtered by box size, then any box
//! whose own area is covered beyond `overlap_threshold` by a higher-scoring
//! box is removed. The surviving boxes of all captions in an image are then
//! merged into [`AggregatedBox`]es that record how many captions produced
//! them. A classic IoU-based NMS is kept alongside as the baseline.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::datamodel::{bbox_value, group_predictions, Prediction};
use crate::error::{Error, Result};
use crate::geometry::{iou, overlap_ratio, BBox};
use crate::json::float;
use crate::matching::score_order;
use crate::scalar::Scalar;

/// Which boxes may suppress others in the overlap stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SuppressionMode {
    /// Any size-surviving box with a strictly higher score suppresses, even
    /// one that is itself removed by the overlap stage.
    #[default]
    AnyHigher,
    /// Only boxes that end up kept suppress (NMS-style keep set).
    KeptOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuppressionConfig<T = f64> {
    pub overlap_threshold: f64,
    pub min_width: T,
    pub min_height: T,
    pub max_width: T,
    pub max_height: T,
    pub mode: SuppressionMode,
}

/// Named parameter sets for the two benchmark domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Retail products, large objects photographed up close.
    RetailProducts,
    /// Vehicles in road scenes.
    Vehicles,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rp" => Ok(Self::RetailProducts),
            "c" => Ok(Self::Vehicles),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other:?} (expected rp or c)"
            ))),
        }
    }
}

impl<T: Scalar> SuppressionConfig<T> {
    pub fn new(
        overlap_threshold: f64,
        (min_width, min_height): (T, T),
        (max_width, max_height): (T, T),
    ) -> Result<Self> {
        let cfg = Self {
            overlap_threshold,
            min_width,
            min_height,
            max_width,
            max_height,
            mode: SuppressionMode::AnyHigher,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(preset: Preset) -> Self {
        let c = |v: f64| T::from_f64_lossy(v);
        let (min, max) = match preset {
            Preset::RetailProducts => ((200.0, 200.0), (2250.0, 2000.0)),
            Preset::Vehicles => ((14.0, 14.0), (960.0, 960.0)),
        };
        Self {
            overlap_threshold: 0.8,
            min_width: c(min.0),
            min_height: c(min.1),
            max_width: c(max.0),
            max_height: c(max.1),
            mode: SuppressionMode::AnyHigher,
        }
    }

    /// No size limits at all.
    pub fn unbounded(overlap_threshold: f64) -> Self {
        Self {
            overlap_threshold,
            min_width: T::zero(),
            min_height: T::zero(),
            max_width: T::infinity(),
            max_height: T::infinity(),
            mode: SuppressionMode::AnyHigher,
        }
    }

    pub fn with_mode(mut self, mode: SuppressionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "overlap threshold {} outside (0, 1]",
                self.overlap_threshold
            )));
        }
        let nonneg = self.min_width >= T::zero() && self.min_height >= T::zero();
        if !nonneg || self.min_width > self.max_width || self.min_height > self.max_height {
            return Err(Error::InvalidConfig(format!(
                "size limits {}x{} .. {}x{} are not ordered",
                self.min_width, self.min_height, self.max_width, self.max_height
            )));
        }
        Ok(())
    }

    /// Size stage: a box goes when both sides are under the minimum or
    /// either side is over the maximum.
    pub fn size_ok(&self, b: &BBox<T>) -> bool {
        let (w, h) = (b.width(), b.height());
        let too_small = w < self.min_width && h < self.min_height;
        let too_large = w > self.max_width || h > self.max_height;
        !(too_small || too_large)
    }
}

/// Indices of the kept predictions, by descending score (input order on ties).
pub fn suppress_caption_indices<T: Scalar>(
    preds: &[Prediction<T>],
    cfg: &SuppressionConfig<T>,
) -> Vec<usize> {
    let scores: Vec<T> = preds.iter().map(|p| p.score).collect();
    let survivors: Vec<usize> = score_order(&scores)
        .into_iter()
        .filter(|&i| cfg.size_ok(&preds[i].bbox))
        .collect();

    let covered = |p: usize, q: usize| {
        preds[q].score > preds[p].score
            && overlap_ratio(&preds[p].bbox, &preds[q].bbox).to_f64_exact() > cfg.overlap_threshold
    };

    match cfg.mode {
        SuppressionMode::AnyHigher => survivors
            .iter()
            .copied()
            .filter(|&p| !survivors.iter().any(|&q| covered(p, q)))
            .collect(),
        SuppressionMode::KeptOnly => {
            let mut kept: Vec<usize> = Vec::new();
            for &p in &survivors {
                if !kept.iter().any(|&q| covered(p, q)) {
                    kept.push(p);
                }
            }
            kept
        }
    }
}

/// Size filter plus overlap-proportion suppression for one (image, caption)
/// cell. Output is ordered by descending score.
pub fn suppress_caption<T: Scalar>(
    preds: &[Prediction<T>],
    cfg: &SuppressionConfig<T>,
) -> Vec<Prediction<T>> {
    suppress_caption_indices(preds, cfg)
        .into_iter()
        .map(|i| preds[i].clone())
        .collect()
}

/// A box produced, after rounding to whole pixels, by one or more captions.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedBox<T = f64> {
    pub bbox: BBox<T>,
    pub occurrence_count: usize,
    /// Up to three `(token, frequency)` pairs, most frequent first.
    pub top_tokens: Vec<(String, usize)>,
    pub max_score: T,
}

impl<T: Scalar> AggregatedBox<T> {
    pub fn to_json_value(&self) -> Value {
        json!({
            "bbox": bbox_value(&self.bbox),
            "occurrence_count": self.occurrence_count,
            "top_tokens": self.top_tokens.iter().map(|(t, n)| json!([t, n])).collect::<Vec<_>>(),
            "max_score": float(self.max_score.to_f64_exact()),
        })
    }
}

fn pixel_key<T: Scalar>(b: &BBox<T>) -> [i64; 4] {
    b.to_array().map(|v| v.round().to_i64().unwrap_or(i64::MAX))
}

/// Merges one image's per-caption outputs by integer-pixel box identity.
pub fn aggregate_image<T: Scalar>(
    filtered_per_caption: &BTreeMap<u64, Vec<Prediction<T>>>,
) -> Vec<AggregatedBox<T>> {
    struct Group<T> {
        captions: Vec<u64>,
        tokens: HashMap<String, usize>,
        max_score: T,
    }
    let mut groups: BTreeMap<[i64; 4], Group<T>> = BTreeMap::new();
    for (&caption, preds) in filtered_per_caption {
        for p in preds {
            let g = groups.entry(pixel_key(&p.bbox)).or_insert_with(|| Group {
                captions: Vec::new(),
                tokens: HashMap::new(),
                max_score: p.score,
            });
            if g.captions.last() != Some(&caption) {
                g.captions.push(caption);
            }
            *g.tokens.entry(p.token.clone()).or_default() += 1;
            g.max_score = g.max_score.max(p.score);
        }
    }

    let mut out: Vec<([i64; 4], AggregatedBox<T>)> = groups
        .into_iter()
        .map(|(key, g)| {
            let mut tokens: Vec<(String, usize)> = g.tokens.into_iter().collect();
            tokens.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            tokens.truncate(3);
            let c = |v: i64| T::from(v).unwrap();
            let agg = AggregatedBox {
                bbox: BBox::new(c(key[0]), c(key[1]), c(key[2]), c(key[3])),
                occurrence_count: g.captions.len(),
                top_tokens: tokens,
                max_score: g.max_score,
            };
            (key, agg)
        })
        .collect();
    out.sort_by(|a, b| {
        b.1.max_score
            .partial_cmp(&a.1.max_score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    out.into_iter().map(|(_, agg)| agg).collect()
}

/// Classic greedy NMS: keep the best remaining box, drop everything whose
/// IoU with it exceeds the threshold, repeat. Dropped boxes never suppress.
pub fn standard_nms<T: Scalar>(preds: &[Prediction<T>], iou_threshold: f64) -> Vec<Prediction<T>> {
    let scores: Vec<T> = preds.iter().map(|p| p.score).collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(&scores) {
        if kept
            .iter()
            .all(|&k| iou(&preds[i].bbox, &preds[k].bbox).to_f64_exact() <= iou_threshold)
        {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| preds[i].clone()).collect()
}

/// Result of running the caption-level pipeline over a whole prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessOutcome<T = f64> {
    /// Kept predictions, cell by cell in `(image_id, caption_class_id)` order.
    pub kept: Vec<Prediction<T>>,
    pub removed: usize,
    pub aggregated: BTreeMap<u64, Vec<AggregatedBox<T>>>,
}

impl<T: Scalar> PostprocessOutcome<T> {
    pub fn aggregated_json(&self) -> Value {
        Value::Array(
            self.aggregated
                .iter()
                .map(|(image_id, boxes)| {
                    json!({
                        "image_id": image_id,
                        "boxes": boxes.iter().map(AggregatedBox::to_json_value).collect::<Vec<_>>(),
                    })
                })
                .collect(),
        )
    }
}

/// Applies [`suppress_caption`] to every (image, caption) cell, then
/// aggregates each image.
pub fn postprocess_predictions<T: Scalar>(
    preds: &[Prediction<T>],
    cfg: &SuppressionConfig<T>,
) -> PostprocessOutcome<T> {
    type Cell<T> = ((u64, u64), Vec<Prediction<T>>);
    let cells: Vec<Cell<T>> = group_predictions(preds).into_iter().collect();
    let filtered: Vec<Cell<T>> = cells
        .par_iter()
        .map(|(key, cell)| (*key, suppress_caption(cell, cfg)))
        .collect();

    let mut per_image: BTreeMap<u64, BTreeMap<u64, Vec<Prediction<T>>>> = BTreeMap::new();
    let mut kept = Vec::new();
    for ((image_id, caption), cell) in filtered {
        kept.extend(cell.iter().cloned());
        per_image.entry(image_id).or_default().insert(caption, cell);
    }
    let aggregated = per_image
        .into_iter()
        .map(|(image_id, table)| (image_id, aggregate_image(&table)))
        .collect();
    PostprocessOutcome {
        removed: preds.len() - kept.len(),
        kept,
        aggregated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x0: f64, y0: f64, x1: f64, y1: f64, score: f64, token: &str) -> Prediction {
        Prediction {
            image_id: 1,
            bbox: BBox::new(x0, y0, x1, y1),
            score,
            token: token.into(),
            caption_class_id: 3,
        }
    }

    #[test]
    fn presets_hold_published_values() {
        let rp = SuppressionConfig::<f64>::preset(Preset::RetailProducts);
        assert_eq!(rp.overlap_threshold, 0.8);
        assert_eq!((rp.min_width, rp.min_height, rp.max_width, rp.max_height), (200., 200., 2250., 2000.));
        let c = SuppressionConfig::<f64>::preset("c".parse().unwrap());
        assert_eq!((c.min_width, c.min_height, c.max_width, c.max_height), (14., 14., 960., 960.));
        assert!("x".parse::<Preset>().is_err());
    }

    #[test]
    fn nested_lower_score_box_is_removed() {
        let preds = vec![p(0., 0., 100., 100., 0.9, "bag"), p(10., 10., 30., 30., 0.5, "text")];
        let out = suppress_caption(&preds, &SuppressionConfig::unbounded(0.8));
        assert_eq!(out, vec![preds[0].clone()]);
    }

    #[test]
    fn nested_higher_score_box_survives() {
        // the small box scores higher, so nothing covers it; the large box
        // is only 4% covered
        let preds = vec![p(0., 0., 100., 100., 0.5, "bag"), p(10., 10., 30., 30., 0.9, "text")];
        let out = suppress_caption(&preds, &SuppressionConfig::unbounded(0.8));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].token, "text");
    }

    #[test]
    fn disjoint_boxes_kept() {
        let preds = vec![p(0., 0., 10., 10., 0.2, "a"), p(20., 20., 30., 30., 0.9, "b")];
        assert_eq!(suppress_caption(&preds, &SuppressionConfig::unbounded(0.8)).len(), 2);
    }

    #[test]
    fn size_stage_uses_preset_minimum() {
        let cfg = SuppressionConfig::preset(Preset::RetailProducts);
        assert!(suppress_caption(&[p(0., 0., 150., 150., 0.9, "bag")], &cfg).is_empty());
        // one side above the minimum keeps the box
        assert_eq!(suppress_caption(&[p(0., 0., 150., 250., 0.9, "bag")], &cfg).len(), 1);
        // either side above the maximum removes it
        assert!(suppress_caption(&[p(0., 0., 2300., 300., 0.9, "bag")], &cfg).is_empty());
    }

    #[test]
    fn equal_scores_do_not_suppress() {
        let preds = vec![p(0., 0., 100., 100., 0.7, "a"), p(0., 0., 100., 100., 0.7, "b")];
        assert_eq!(suppress_caption(&preds, &SuppressionConfig::unbounded(0.8)).len(), 2);
    }

    #[test]
    fn any_higher_versus_kept_only() {
        // A covers B, B covers C, A does not cover C.
        let a = p(0., 0., 100., 100., 0.9, "a");
        let b = p(50., 0., 140., 100., 0.8, "b"); // 50/90 of B lies in A
        let c = p(100., 0., 140., 100., 0.7, "c"); // inside B, outside A
        let strict = SuppressionConfig::unbounded(0.5);
        let literal = suppress_caption(&[a.clone(), b.clone(), c.clone()], &strict);
        assert_eq!(literal, vec![a.clone()]);
        let kept_only = suppress_caption(
            &[a.clone(), b, c.clone()],
            &strict.with_mode(SuppressionMode::KeptOnly),
        );
        assert_eq!(kept_only, vec![a, c]);
    }

    #[test]
    fn empty_input() {
        assert!(suppress_caption::<f64>(&[], &SuppressionConfig::unbounded(0.8)).is_empty());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SuppressionConfig::new(0.0, (1.0, 1.0), (2.0, 2.0)).is_err());
        assert!(SuppressionConfig::new(0.8, (3.0, 1.0), (2.0, 2.0)).is_err());
        assert!(SuppressionConfig::new(1.0, (1.0, 1.0), (2.0, 2.0)).is_ok());
    }

    #[test]
    fn identical_box_from_every_caption() {
        let mut table = BTreeMap::new();
        for caption in 0..121u64 {
            let mut q = p(10., 10., 500., 400., 0.5 + caption as f64 / 1000.0, "bag");
            q.caption_class_id = caption;
            table.insert(caption, vec![q]);
        }
        let agg = aggregate_image(&table);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].occurrence_count, 121);
        assert_eq!(agg[0].top_tokens, vec![("bag".to_string(), 121)]);
        assert_eq!(agg[0].max_score, 0.62);
    }

    #[test]
    fn boxes_five_pixels_apart_do_not_merge() {
        let mut table = BTreeMap::new();
        table.insert(1, vec![p(0., 0., 100., 100., 0.5, "a")]);
        table.insert(2, vec![p(5., 0., 105., 100., 0.5, "a")]);
        assert_eq!(aggregate_image(&table).len(), 2);
    }

    #[test]
    fn singleton_group() {
        let mut table = BTreeMap::new();
        table.insert(4, vec![p(0.4, 0., 100.2, 99.6, 0.3, "logo")]);
        let agg = aggregate_image(&table);
        assert_eq!(agg[0].occurrence_count, 1);
        assert_eq!(agg[0].top_tokens, vec![("logo".to_string(), 1)]);
        assert_eq!(agg[0].bbox, BBox::new(0., 0., 100., 100.));
    }

    #[test]
    fn top_tokens_break_ties_lexicographically() {
        let mut table = BTreeMap::new();
        for (caption, token) in [(1, "wheel"), (2, "car"), (3, "wheel"), (4, "blue"), (5, "car"), (6, "door")] {
            table.insert(caption, vec![p(0., 0., 10., 10., 0.5, token)]);
        }
        let agg = aggregate_image(&table);
        let names: Vec<&str> = agg[0].top_tokens.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(names, vec!["car", "wheel", "blue"]);
        assert_eq!(agg[0].occurrence_count, 6);
    }

    #[test]
    fn nms_duplicates() {
        let preds = vec![p(0., 0., 10., 10., 0.8, "a"), p(0., 0., 10., 10., 0.9, "a")];
        let out = standard_nms(&preds, 0.5);
        assert_eq!(out, vec![preds[1].clone()]);
    }

    #[test]
    fn nms_disjoint() {
        let preds = vec![p(0., 0., 10., 10., 0.8, "a"), p(20., 0., 30., 10., 0.9, "a")];
        assert_eq!(standard_nms(&preds, 0.5).len(), 2);
    }

    #[test]
    fn nms_chain() {
        // A-B and B-C have IoU 0.6 while A-C is 1/3, under the threshold.
        // Hand trace: A is kept, B goes, C stays because B was removed.
        let a = p(0., 0., 100., 10., 0.9, "a");
        let b = p(25., 0., 125., 10., 0.8, "b");
        let c = p(50., 0., 150., 10., 0.7, "c");
        assert!((iou(&a.bbox, &b.bbox) - 0.6).abs() < 1e-12);
        assert!((iou(&b.bbox, &c.bbox) - 0.6).abs() < 1e-12);
        assert!((iou(&a.bbox, &c.bbox) - 1.0 / 3.0).abs() < 1e-12);
        let out = standard_nms(&[c.clone(), a.clone(), b], 0.5);
        assert_eq!(out, vec![a, c]);
    }

    #[test]
    fn pipeline_counts_removed() {
        let mut preds = vec![p(0., 0., 100., 100., 0.9, "bag"), p(10., 10., 30., 30., 0.5, "text")];
        let mut other = preds[0].clone();
        other.caption_class_id = 4;
        preds.push(other);
        let out = postprocess_predictions(&preds, &SuppressionConfig::unbounded(0.8));
        assert_eq!(out.removed, 1);
        assert_eq!(out.kept.len(), 2);
        assert_eq!(out.aggregated[&1][0].occurrence_count, 2);
    }
}
