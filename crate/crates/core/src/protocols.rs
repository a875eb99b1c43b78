//! The four evaluation protocols.
//!
//! - supervised: closed class set, token must name a class.
//! - 3F-OVD: one caption per class shared by all images; every box produced
//!   under a caption is a detection of that caption's class.
//! - FG-OVD: each object has its own positive caption and near-miss
//!   negatives; the detector must rank the positive first.
//! - OV-VG: exactly one box per phrase, scored by top-1 accuracy.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::datamodel::{bbox_from_array, bbox_value, parse_record, tokenize, Dataset, Prediction, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::json::float;
use crate::metrics::{
    average_precision, coco_map_tagged, default_iou_thresholds, pr_curve, validate_thresholds, ClassAp,
    Counts, EvalReport, PooledDetection, ProtocolTag,
};
use crate::postprocess::{postprocess_predictions, standard_nms, SuppressionConfig};
use crate::scalar::Scalar;

pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_GROUNDING_IOU: f64 = 0.5;

/// Protocol selection with the settings each protocol needs.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolConfig<T = f64> {
    Supervised {
        iou_thresholds: Vec<f64>,
        nms_iou_threshold: f64,
    },
    ThreeFOvd {
        iou_thresholds: Vec<f64>,
        suppression: Option<SuppressionConfig<T>>,
        strict_tokens: bool,
    },
    FgOvd {
        iou_thresholds: Vec<f64>,
        negatives_per_positive: usize,
        vocabularies: usize,
    },
    OvVg {
        iou_threshold: f64,
    },
}

impl<T: Scalar> ProtocolConfig<T> {
    pub fn supervised() -> Self {
        Self::Supervised {
            iou_thresholds: default_iou_thresholds(),
            nms_iou_threshold: DEFAULT_NMS_IOU,
        }
    }

    pub fn three_f_ovd(suppression: Option<SuppressionConfig<T>>) -> Self {
        Self::ThreeFOvd {
            iou_thresholds: default_iou_thresholds(),
            suppression,
            strict_tokens: false,
        }
    }

    pub fn fg_ovd(negatives_per_positive: usize, vocabularies: usize) -> Self {
        Self::FgOvd {
            iou_thresholds: default_iou_thresholds(),
            negatives_per_positive,
            vocabularies,
        }
    }

    pub fn ov_vg() -> Self {
        Self::OvVg {
            iou_threshold: DEFAULT_GROUNDING_IOU,
        }
    }

    pub fn tag(&self) -> ProtocolTag {
        match self {
            Self::Supervised { .. } => ProtocolTag::Supervised,
            Self::ThreeFOvd { .. } => ProtocolTag::ThreeFOvd,
            Self::FgOvd { .. } => ProtocolTag::FgOvd,
            Self::OvVg { .. } => ProtocolTag::OvVg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Supervised {
                iou_thresholds,
                nms_iou_threshold,
            } => {
                validate_thresholds(iou_thresholds)?;
                if !(0.0..=1.0).contains(nms_iou_threshold) {
                    return Err(Error::InvalidConfig(format!(
                        "NMS IoU threshold {nms_iou_threshold} outside [0, 1]"
                    )));
                }
                Ok(())
            }
            Self::ThreeFOvd {
                iou_thresholds,
                suppression,
                ..
            } => {
                validate_thresholds(iou_thresholds)?;
                suppression.as_ref().map_or(Ok(()), SuppressionConfig::validate)
            }
            Self::FgOvd {
                iou_thresholds,
                negatives_per_positive,
                vocabularies,
            } => {
                validate_thresholds(iou_thresholds)?;
                if *negatives_per_positive == 0 || *vocabularies == 0 {
                    return Err(Error::InvalidConfig(
                        "FG-OVD needs at least one negative and one vocabulary".into(),
                    ));
                }
                Ok(())
            }
            Self::OvVg { iou_threshold } => validate_thresholds(&[*iou_threshold]),
        }
    }
}

fn wrong_variant(expected: &str) -> Error {
    Error::InvalidConfig(format!("expected a {expected} protocol configuration"))
}

/// Closed-set evaluation: each token must name a class; the prediction is
/// relabelled to that class, NMS runs per (image, class), then COCO mAP.
pub fn eval_supervised<T: Scalar>(
    ds: &Dataset<T>,
    preds: &[Prediction<T>],
    cfg: &ProtocolConfig<T>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let ProtocolConfig::Supervised {
        iou_thresholds,
        nms_iou_threshold,
    } = cfg
    else {
        return Err(wrong_variant("supervised"));
    };
    let by_name: HashMap<String, u64> = ds
        .classes
        .iter()
        .map(|c| (c.name.trim().to_lowercase(), c.id))
        .collect();
    let mut cells: BTreeMap<(u64, u64), Vec<Prediction<T>>> = BTreeMap::new();
    for (index, p) in preds.iter().enumerate() {
        let Some(&class_id) = by_name.get(&p.token.trim().to_lowercase()) else {
            return Err(Error::UnknownClass {
                index,
                token: p.token.clone(),
            });
        };
        let mut p = p.clone();
        p.caption_class_id = class_id;
        cells.entry((p.image_id, class_id)).or_default().push(p);
    }
    let cells: Vec<Vec<Prediction<T>>> = cells.into_values().collect();
    let kept: Vec<Prediction<T>> = cells
        .par_iter()
        .map(|cell| standard_nms(cell, *nms_iou_threshold))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    coco_map_tagged(ds, &kept, iou_thresholds, ProtocolTag::Supervised)
}

/// Tokens of `token` all occur in the caption token set, or it is `[UNK]`.
fn token_in_caption(token: &str, caption_tokens: &HashSet<String>) -> bool {
    if token == UNK_TOKEN {
        return true;
    }
    let parts = tokenize(token);
    !parts.is_empty() && parts.iter().all(|t| caption_tokens.contains(t))
}

/// Caption-conditioned evaluation: every box produced under the caption of
/// class c counts as a class-c detection, whatever its token. Optional
/// per-caption suppression runs first.
pub fn eval_3fovd<T: Scalar>(
    ds: &Dataset<T>,
    per_caption_preds: &[Prediction<T>],
    cfg: &ProtocolConfig<T>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let ProtocolConfig::ThreeFOvd {
        iou_thresholds,
        suppression,
        strict_tokens,
    } = cfg
    else {
        return Err(wrong_variant("3F-OVD"));
    };
    let vocab: HashMap<u64, HashSet<String>> = ds
        .classes
        .iter()
        .map(|c| (c.id, tokenize(&c.caption).into_iter().collect()))
        .collect();
    for (index, p) in per_caption_preds.iter().enumerate() {
        let Some(tokens) = vocab.get(&p.caption_class_id) else {
            return Err(Error::InvalidConfig(format!(
                "prediction {index}: caption_class_id {} does not exist",
                p.caption_class_id
            )));
        };
        if *strict_tokens && !token_in_caption(&p.token, tokens) {
            return Err(Error::TokenNotInCaption {
                index,
                token: p.token.clone(),
                class_id: p.caption_class_id,
            });
        }
    }
    match suppression {
        Some(sc) => {
            let outcome = postprocess_predictions(per_caption_preds, sc);
            log::debug!("suppression removed {} of {} boxes", outcome.removed, per_caption_preds.len());
            coco_map_tagged(ds, &outcome.kept, iou_thresholds, ProtocolTag::ThreeFOvd)
        }
        None => coco_map_tagged(ds, per_caption_preds, iou_thresholds, ProtocolTag::ThreeFOvd),
    }
}

/// One object's caption group: caption 0 is the positive, captions
/// `1..=negatives.len()` the negatives in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionGroup {
    pub image_id: u64,
    /// Ordinal of the object among its image's annotations.
    pub gt_index: usize,
    pub positive: String,
    pub negatives: Vec<String>,
    pub vocabulary: usize,
}

impl CaptionGroup {
    pub fn caption_count(&self) -> usize {
        1 + self.negatives.len()
    }

    pub fn caption(&self, index: usize) -> Option<&str> {
        if index == 0 {
            Some(&self.positive)
        } else {
            self.negatives.get(index - 1).map(String::as_str)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptionDetection<T = f64> {
    pub bbox: BBox<T>,
    pub score: T,
}

/// `(group index, caption index) → detection` table. A group with no
/// entries at all abstains and counts as a miss.
pub type CaptionScores<T = f64> = BTreeMap<(usize, usize), CaptionDetection<T>>;

/// Outcome of one group at one IoU threshold set.
struct GroupOutcome {
    class_id: u64,
    image_id: u64,
    score: f64,
    /// TP flag per IoU threshold; empty when the group abstained.
    tp: Vec<bool>,
}

fn validate_group<T: Scalar>(
    ds: &Dataset<T>,
    i: usize,
    g: &CaptionGroup,
    k: usize,
    n: usize,
) -> Result<usize> {
    let bad = |m: String| Error::InvalidConfig(format!("caption group {i}: {m}"));
    if g.negatives.is_empty() {
        return Err(bad("no negative captions".into()));
    }
    if g.negatives.len() != k {
        return Err(bad(format!("{} negatives, {k} expected", g.negatives.len())));
    }
    if g.negatives.contains(&g.positive) {
        return Err(bad("a negative equals the positive".into()));
    }
    if g.vocabulary >= n {
        return Err(bad(format!("vocabulary {} outside 0..{n}", g.vocabulary)));
    }
    ds.gts_of_image(g.image_id)
        .get(g.gt_index)
        .copied()
        .ok_or_else(|| bad(format!("image {} has no object {}", g.image_id, g.gt_index)))
}

/// Fine-grained evaluation over caption groups.
///
/// Per group the predicted caption is the argmax score (ties to the lower
/// caption index, so the positive wins ties); the group is a TP when that
/// caption is the positive and its box reaches the IoU threshold. Groups
/// are pooled per class into AP, mAP is taken per vocabulary and averaged
/// over the vocabularies present.
pub fn eval_fgovd<T: Scalar>(
    ds: &Dataset<T>,
    groups: &[CaptionGroup],
    caption_scores: &CaptionScores<T>,
    cfg: &ProtocolConfig<T>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let ProtocolConfig::FgOvd {
        iou_thresholds,
        negatives_per_positive,
        vocabularies,
    } = cfg
    else {
        return Err(wrong_variant("FG-OVD"));
    };
    if ds.ground_truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let gt_of_group = groups
        .iter()
        .enumerate()
        .map(|(i, g)| validate_group(ds, i, g, *negatives_per_positive, *vocabularies))
        .collect::<Result<Vec<usize>>>()?;
    if let Some(&(g, _)) = caption_scores.keys().find(|(g, c)| {
        groups.get(*g).is_none_or(|grp| *c >= grp.caption_count())
    }) {
        return Err(Error::InvalidConfig(format!(
            "caption score entry for group {g} does not match any caption"
        )));
    }

    let outcomes = groups
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let gt = &ds.ground_truth[gt_of_group[i]];
            let present: Vec<(usize, &CaptionDetection<T>)> = (0..g.caption_count())
                .filter_map(|c| caption_scores.get(&(i, c)).map(|d| (c, d)))
                .collect();
            if present.is_empty() {
                return Ok(GroupOutcome {
                    class_id: gt.class_id,
                    image_id: g.image_id,
                    score: 0.0,
                    tp: Vec::new(),
                });
            }
            if present.len() < g.caption_count() {
                let missing = (0..g.caption_count())
                    .find(|c| !caption_scores.contains_key(&(i, *c)))
                    .unwrap_or(0);
                return Err(Error::MissingScore {
                    group: i,
                    caption: missing,
                });
            }
            let (best, det) = present
                .iter()
                .copied()
                .reduce(|a, b| if b.1.score > a.1.score { b } else { a })
                .expect("non-empty");
            let overlap = iou(&det.bbox, &gt.bbox).to_f64_exact();
            let tp = iou_thresholds.iter().map(|&t| best == 0 && overlap >= t).collect();
            Ok(GroupOutcome {
                class_id: gt.class_id,
                image_id: g.image_id,
                score: det.score.to_f64_exact(),
                tp,
            })
        })
        .collect::<Result<Vec<GroupOutcome>>>()?;

    let vocab_ids: BTreeSet<usize> = groups.iter().map(|g| g.vocabulary).collect();
    let mut classes: Vec<_> = ds.classes.iter().collect();
    classes.sort_by_key(|c| c.id);

    let mut reports = Vec::new();
    for &v in &vocab_ids {
        let per_class: Vec<ClassAp> = classes
            .iter()
            .map(|class| {
                let members: Vec<usize> = (0..groups.len())
                    .filter(|&i| groups[i].vocabulary == v && outcomes[i].class_id == class.id)
                    .collect();
                let n_gt = members.len();
                let mut ap = Vec::new();
                let mut counts = Vec::new();
                let mut first_curve = None;
                for t in 0..iou_thresholds.len() {
                    let pooled: Vec<PooledDetection> = members
                        .iter()
                        .filter(|&&i| !outcomes[i].tp.is_empty())
                        .map(|&i| PooledDetection {
                            score: outcomes[i].score,
                            image_id: outcomes[i].image_id,
                            index: i,
                            tp: outcomes[i].tp[t],
                        })
                        .collect();
                    let tp = pooled.iter().filter(|d| d.tp).count();
                    counts.push(Counts {
                        tp,
                        fp: pooled.len() - tp,
                        fn_: n_gt - tp,
                    });
                    let curve = pr_curve(pooled, n_gt);
                    ap.push((n_gt > 0).then(|| average_precision(&curve)));
                    first_curve.get_or_insert(curve);
                }
                ClassAp {
                    class_id: class.id,
                    name: class.name.clone(),
                    novelty: class.novelty,
                    n_gt,
                    ap,
                    curve: first_curve.unwrap_or_default(),
                    counts,
                }
            })
            .collect();
        reports.push(EvalReport::from_classes(
            ProtocolTag::FgOvd,
            iou_thresholds.clone(),
            per_class,
        ));
    }
    Ok(combine_vocabularies(&classes, iou_thresholds, reports))
}

fn mean_some(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn combine_vocabularies(
    classes: &[&crate::datamodel::ClassEntry],
    iou_thresholds: &[f64],
    reports: Vec<EvalReport>,
) -> EvalReport {
    let per_class: Vec<ClassAp> = classes
        .iter()
        .enumerate()
        .map(|(ci, class)| {
            let rows: Vec<&ClassAp> = reports.iter().map(|r| &r.per_class[ci]).collect();
            let ap = (0..iou_thresholds.len())
                .map(|t| mean_some(rows.iter().map(|r| r.ap[t])))
                .collect();
            let counts = (0..iou_thresholds.len())
                .map(|t| {
                    let mut c = Counts::default();
                    for r in &rows {
                        c += r.counts[t];
                    }
                    c
                })
                .collect();
            ClassAp {
                class_id: class.id,
                name: class.name.clone(),
                novelty: class.novelty,
                n_gt: rows.iter().map(|r| r.n_gt).sum(),
                ap,
                curve: rows.first().map(|r| r.curve.clone()).unwrap_or_default(),
                counts,
            }
        })
        .collect();
    let mut combined = EvalReport::from_classes(ProtocolTag::FgOvd, iou_thresholds.to_vec(), per_class);
    let maps: Vec<f64> = reports.iter().map(|r| r.map).collect();
    combined.map = mean_some(maps.iter().map(|m| Some(*m))).unwrap_or(0.0);
    combined.map_base = mean_some(reports.iter().map(|r| r.map_base));
    combined.map_novel = mean_some(reports.iter().map(|r| r.map_novel));
    combined.vocabulary_maps = Some(maps);
    combined
}

/// Byte ranges of alphanumeric runs.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

fn match_case(original: &str, replacement: &str) -> String {
    if original.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = replacement.chars();
        chars
            .next()
            .map(|c| c.to_uppercase().chain(chars).collect())
            .unwrap_or_default()
    } else {
        replacement.to_string()
    }
}

/// Negative captions by colour replacement: each candidate swaps exactly
/// one palette word of `positive` for a different palette word. `k`
/// candidates are drawn under `seed` and returned in candidate order
/// (word position, then palette order).
pub fn make_negative_captions(positive: &str, palette: &[String], k: usize, seed: u64) -> Result<Vec<String>> {
    let mut colors: Vec<String> = Vec::new();
    for c in palette {
        let c = c.trim().to_lowercase();
        if !c.is_empty() && !colors.contains(&c) {
            colors.push(c);
        }
    }
    if colors.len() < 2 || k == 0 {
        return Err(Error::InvalidConfig(
            "negative captions need k >= 1 and at least two palette words".into(),
        ));
    }
    let occurrences: Vec<(usize, usize)> = word_spans(positive)
        .into_iter()
        .filter(|&(s, e)| colors.contains(&positive[s..e].to_lowercase()))
        .collect();
    if occurrences.is_empty() {
        return Err(Error::NoAttribute {
            caption: positive.to_string(),
        });
    }
    let mut candidates: Vec<String> = Vec::new();
    for &(s, e) in &occurrences {
        let word = &positive[s..e];
        for color in colors.iter().filter(|c| **c != word.to_lowercase()) {
            let candidate = format!("{}{}{}", &positive[..s], match_case(word, color), &positive[e..]);
            if candidate != positive && !candidates.contains(&candidate) {
                candidates.push(candidate);
            }
        }
    }
    if candidates.len() < k {
        return Err(Error::InsufficientNegatives {
            caption: positive.to_string(),
            available: candidates.len(),
            requested: k,
        });
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| candidates[i].clone()).collect())
}

/// One caption group per annotated object and vocabulary, positives taken
/// from the class captions.
pub fn build_caption_groups<T: Scalar>(
    ds: &Dataset<T>,
    palette: &[String],
    k: usize,
    vocabularies: usize,
    seed: u64,
) -> Result<Vec<CaptionGroup>> {
    let mut groups = Vec::new();
    for v in 0..vocabularies {
        for img in &ds.images {
            for (ordinal, &g) in ds.gts_of_image(img.id).iter().enumerate() {
                let class = ds.class(ds.ground_truth[g].class_id).expect("validated reference");
                let s = seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add((v as u64) << 32)
                    .wrapping_add(g as u64);
                groups.push(CaptionGroup {
                    image_id: img.id,
                    gt_index: ordinal,
                    positive: class.caption.clone(),
                    negatives: make_negative_captions(&class.caption, palette, k, s)?,
                    vocabulary: v,
                });
            }
        }
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingQuery<T = f64> {
    pub image_id: u64,
    pub caption: String,
    pub gt_box: BBox<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingReport {
    pub iou_threshold: f64,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_query_iou: Vec<f64>,
}

impl GroundingReport {
    pub fn to_json_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("protocol".into(), json!(ProtocolTag::OvVg.as_str()));
        m.insert("iou_threshold".into(), float(self.iou_threshold));
        m.insert("total".into(), json!(self.total));
        m.insert("correct".into(), json!(self.correct));
        m.insert("accuracy".into(), float(self.accuracy));
        m.insert(
            "per_query_iou".into(),
            Value::Array(self.per_query_iou.iter().map(|v| float(*v)).collect()),
        );
        Value::Object(m)
    }

    pub fn to_text_table(&self) -> String {
        format!(
            "protocol  ovvg\nqueries   {}\ncorrect   {}\naccuracy  {:.4} (IoU >= {})\n",
            self.total, self.correct, self.accuracy, self.iou_threshold
        )
    }
}

/// Top-1 grounding accuracy. `answers[i]` holds the boxes returned for
/// query `i`; exactly one is required.
pub fn eval_ovvg<T: Scalar>(
    queries: &[GroundingQuery<T>],
    answers: &[Vec<BBox<T>>],
    iou_threshold: f64,
) -> Result<GroundingReport> {
    validate_thresholds(&[iou_threshold])?;
    if answers.len() > queries.len() {
        return Err(Error::InvalidConfig(format!(
            "{} answer lists for {} queries",
            answers.len(),
            queries.len()
        )));
    }
    let mut per_query_iou = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        if q.caption.trim().is_empty() {
            return Err(Error::InvalidConfig(format!("grounding query {i}: empty caption")));
        }
        let boxes = answers.get(i).ok_or(Error::MissingAnswer { query: i })?;
        match boxes.as_slice() {
            [] => return Err(Error::MissingAnswer { query: i }),
            [b] => per_query_iou.push(iou(b, &q.gt_box).to_f64_exact()),
            more => {
                return Err(Error::MultipleAnswer {
                    query: i,
                    count: more.len(),
                })
            }
        }
    }
    let correct = per_query_iou.iter().filter(|v| **v >= iou_threshold).count();
    let total = queries.len();
    Ok(GroundingReport {
        iou_threshold,
        total,
        correct,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_query_iou,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    bbox: [f64; 4],
    score: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    image_id: u64,
    gt_index: usize,
    positive: String,
    negatives: Vec<String>,
    #[serde(default)]
    vocabulary: usize,
    #[serde(default)]
    detections: Vec<Option<RawDetection>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuery {
    image_id: u64,
    caption: String,
    gt_bbox: [f64; 4],
    answers: Vec<[f64; 4]>,
    /// Grounding models often attach a confidence; it plays no role in
    /// top-1 accuracy and is accepted only to be ignored.
    #[serde(default)]
    #[allow(dead_code)]
    score: Option<f64>,
}

fn expect_array<'a>(source: &str, value: &'a Value, what: &str) -> Result<&'a Vec<Value>> {
    value.as_array().ok_or_else(|| Error::Schema {
        path: source.to_string(),
        record: "top level".into(),
        message: format!("expected an array of {what}"),
    })
}

fn checked_box<T: Scalar>(source: &str, record: &str, a: [f64; 4], w: u32, h: u32) -> Result<BBox<T>> {
    let b: BBox<T> = bbox_from_array(a);
    if !b.is_valid() {
        return Err(Error::Schema {
            path: source.to_string(),
            record: record.to_string(),
            message: "bbox must be finite with x_max >= x_min, y_max >= y_min".into(),
        });
    }
    Ok(b.clamp_to(T::from(w).unwrap(), T::from(h).unwrap()))
}

/// Parses a caption-group file. Each record's `detections` list is aligned
/// with `[positive, negatives...]`; `null` or a short list leaves entries
/// missing, an empty list abstains.
pub fn parse_caption_groups<T: Scalar>(
    source: &str,
    value: &Value,
    ds: &Dataset<T>,
) -> Result<(Vec<CaptionGroup>, CaptionScores<T>)> {
    let items = expect_array(source, value, "caption groups")?;
    let mut groups = Vec::with_capacity(items.len());
    let mut scores = CaptionScores::new();
    for (i, item) in items.iter().enumerate() {
        let record = format!("groups[{i}]");
        let raw: RawGroup = parse_record(source, record.clone(), item)?;
        let Some(img) = ds.image(raw.image_id) else {
            return Err(Error::Integrity {
                path: source.to_string(),
                record,
                message: format!("image_id {} does not exist", raw.image_id),
            });
        };
        if raw.gt_index >= ds.gts_of_image(raw.image_id).len() {
            return Err(Error::Integrity {
                path: source.to_string(),
                record,
                message: format!("image {} has no object {}", raw.image_id, raw.gt_index),
            });
        }
        if raw.detections.len() > 1 + raw.negatives.len() {
            return Err(Error::Schema {
                path: source.to_string(),
                record,
                message: "more detections than captions".into(),
            });
        }
        for (c, det) in raw.detections.iter().enumerate() {
            let Some(det) = det else { continue };
            if !det.score.is_finite() || det.score < 0.0 {
                return Err(Error::NegativeScore {
                    path: source.to_string(),
                    record,
                    score: det.score,
                });
            }
            let bbox = checked_box(source, &record, det.bbox, img.width, img.height)?;
            scores.insert(
                (i, c),
                CaptionDetection {
                    bbox,
                    score: T::from_f64_lossy(det.score),
                },
            );
        }
        groups.push(CaptionGroup {
            image_id: raw.image_id,
            gt_index: raw.gt_index,
            positive: raw.positive,
            negatives: raw.negatives,
            vocabulary: raw.vocabulary,
        });
    }
    Ok((groups, scores))
}

pub fn caption_groups_to_json<T: Scalar>(groups: &[CaptionGroup], scores: &CaptionScores<T>) -> Value {
    Value::Array(
        groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let mut dets: Vec<Value> = (0..g.caption_count())
                    .map(|c| {
                        scores.get(&(i, c)).map_or(Value::Null, |d| {
                            json!({"bbox": bbox_value(&d.bbox), "score": float(d.score.to_f64_exact())})
                        })
                    })
                    .collect();
                while dets.last() == Some(&Value::Null) {
                    dets.pop();
                }
                json!({
                    "image_id": g.image_id,
                    "gt_index": g.gt_index,
                    "positive": g.positive,
                    "negatives": g.negatives,
                    "vocabulary": g.vocabulary,
                    "detections": dets,
                })
            })
            .collect(),
    )
}

/// Parses a grounding file: one record per query with its answer boxes.
/// Queries and the answer boxes returned for each.
pub type GroundingSet<T = f64> = (Vec<GroundingQuery<T>>, Vec<Vec<BBox<T>>>);

pub fn parse_grounding<T: Scalar>(
    source: &str,
    value: &Value,
    ds: &Dataset<T>,
) -> Result<GroundingSet<T>> {
    let items = expect_array(source, value, "grounding queries")?;
    let mut queries = Vec::with_capacity(items.len());
    let mut answers = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let record = format!("queries[{i}]");
        let raw: RawQuery = parse_record(source, record.clone(), item)?;
        let Some(img) = ds.image(raw.image_id) else {
            return Err(Error::Integrity {
                path: source.to_string(),
                record,
                message: format!("image_id {} does not exist", raw.image_id),
            });
        };
        if raw.caption.trim().is_empty() {
            return Err(Error::Schema {
                path: source.to_string(),
                record,
                message: "caption must be non-empty".into(),
            });
        }
        let gt_box = checked_box(source, &record, raw.gt_bbox, img.width, img.height)?;
        let boxes = raw
            .answers
            .iter()
            .map(|a| checked_box(source, &record, *a, img.width, img.height))
            .collect::<Result<Vec<BBox<T>>>>()?;
        queries.push(GroundingQuery {
            image_id: raw.image_id,
            caption: raw.caption,
            gt_box,
        });
        answers.push(boxes);
    }
    Ok((queries, answers))
}

pub fn grounding_to_json<T: Scalar>(queries: &[GroundingQuery<T>], answers: &[Vec<BBox<T>>]) -> Value {
    Value::Array(
        queries
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let boxes: Vec<Value> = answers
                    .get(i)
                    .map(|a| a.iter().map(bbox_value).collect())
                    .unwrap_or_default();
                json!({
                    "image_id": q.image_id,
                    "caption": q.caption,
                    "gt_bbox": bbox_value(&q.gt_box),
                    "answers": boxes,
                })
            })
            .collect(),
    )
}
