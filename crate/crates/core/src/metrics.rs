//! Precision/recall curves, 101-point interpolated AP and COCO-style mAP.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::datamodel::{ClassEntry, Dataset, GroundTruth, Novelty, Prediction};
use crate::error::{Error, Result};
use crate::json::float;
use crate::matching::match_greedy;
use crate::scalar::Scalar;

/// COCO IoU thresholds 0.50:0.05:0.95.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

const RECALL_POINTS: usize = 101;

/// One scored detection after matching, pooled across images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledDetection {
    pub score: f64,
    pub image_id: u64,
    /// Position within its (image, class) cell.
    pub index: usize,
    pub tp: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PRCurve {
    /// `(recall, precision)` after each detection, by descending score.
    pub points: Vec<(f64, f64)>,
    pub n_gt: usize,
}

/// Cumulative precision/recall over detections pooled across images.
///
/// Detections are ranked by descending score, then ascending image id, then
/// ascending index within the image.
pub fn pr_curve(mut detections: Vec<PooledDetection>, n_gt: usize) -> PRCurve {
    detections.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.image_id.cmp(&b.image_id))
            .then(a.index.cmp(&b.index))
    });
    let mut tp = 0usize;
    let points = detections
        .iter()
        .enumerate()
        .map(|(rank, d)| {
            tp += usize::from(d.tp);
            let recall = if n_gt == 0 {
                0.0
            } else {
                tp as f64 / n_gt as f64
            };
            (recall, tp as f64 / (rank + 1) as f64)
        })
        .collect();
    PRCurve { points, n_gt }
}

/// 101-point interpolated AP: the mean over recall levels 0.00, 0.01, ...,
/// 1.00 of the best precision achieved at or beyond that recall.
pub fn average_precision(curve: &PRCurve) -> f64 {
    if curve.points.is_empty() {
        return 0.0;
    }
    // Suffix maxima turn the curve into its interpolated envelope.
    let mut envelope: Vec<(f64, f64)> = curve.points.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
    }
    let mut sum = 0.0;
    let mut cursor = 0;
    for level in 0..RECALL_POINTS {
        let r = level as f64 / 100.0;
        while cursor < envelope.len() && envelope[cursor].0 < r {
            cursor += 1;
        }
        if cursor == envelope.len() {
            break;
        }
        sum += envelope[cursor].1;
    }
    sum / RECALL_POINTS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolTag {
    #[serde(rename = "supervised")]
    Supervised,
    #[serde(rename = "3fovd")]
    ThreeFOvd,
    #[serde(rename = "fgovd")]
    FgOvd,
    #[serde(rename = "ovvg")]
    OvVg,
}

impl ProtocolTag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Supervised => "supervised",
            Self::ThreeFOvd => "3fovd",
            Self::FgOvd => "fgovd",
            Self::OvVg => "ovvg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub class_id: u64,
    pub name: String,
    pub novelty: Novelty,
    pub n_gt: usize,
    /// AP per IoU threshold; `None` when the class has no ground truth.
    pub ap: Vec<Option<f64>>,
    /// PR curve at the first IoU threshold.
    pub curve: PRCurve,
    /// Counts per IoU threshold.
    pub counts: Vec<Counts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: ProtocolTag,
    pub iou_thresholds: Vec<f64>,
    pub per_class: Vec<ClassAp>,
    pub map: f64,
    pub map_base: Option<f64>,
    pub map_novel: Option<f64>,
    /// Totals at the first IoU threshold.
    pub counts: Counts,
    /// Per-vocabulary mAP for protocols evaluated over several vocabularies.
    pub vocabulary_maps: Option<Vec<f64>>,
}

fn mean_over(per_class: &[ClassAp], keep: impl Fn(&ClassAp) -> bool, n_thr: usize) -> Option<f64> {
    let included: Vec<&ClassAp> = per_class
        .iter()
        .filter(|c| c.n_gt > 0 && keep(c))
        .collect();
    if included.is_empty() || n_thr == 0 {
        return None;
    }
    let mut total = 0.0;
    for t in 0..n_thr {
        let s: f64 = included.iter().map(|c| c.ap[t].unwrap_or(0.0)).sum();
        total += s / included.len() as f64;
    }
    Some(total / n_thr as f64)
}

impl EvalReport {
    /// Aggregates per-class results: mean over classes with ground truth,
    /// then over thresholds.
    pub fn from_classes(
        protocol: ProtocolTag,
        iou_thresholds: Vec<f64>,
        per_class: Vec<ClassAp>,
    ) -> Self {
        let n_thr = iou_thresholds.len();
        let map = mean_over(&per_class, |_| true, n_thr).unwrap_or(0.0);
        let map_base = mean_over(&per_class, |c| c.novelty == Novelty::Base, n_thr);
        let map_novel = mean_over(&per_class, |c| c.novelty == Novelty::Novel, n_thr);
        let mut counts = Counts::default();
        for c in &per_class {
            if let Some(first) = c.counts.first() {
                counts += *first;
            }
        }
        Self {
            protocol,
            iou_thresholds,
            per_class,
            map,
            map_base,
            map_novel,
            counts,
            vocabulary_maps: None,
        }
    }

    pub fn to_json_value(&self) -> Value {
        let opt = |v: Option<f64>| v.map_or(Value::Null, float);
        let per_class: Vec<Value> = self
            .per_class
            .iter()
            .map(|c| {
                json!({
                    "class_id": c.class_id,
                    "name": c.name,
                    "novelty": c.novelty,
                    "n_gt": c.n_gt,
                    "ap": c.ap.iter().map(|v| opt(*v)).collect::<Vec<_>>(),
                    "pr_curve": c.curve.points.iter()
                        .map(|&(r, p)| json!([float(r), float(p)]))
                        .collect::<Vec<_>>(),
                })
            })
            .collect();
        let mut v = json!({
            "protocol": self.protocol.as_str(),
            "iou_thresholds": self.iou_thresholds.iter().map(|t| float(*t)).collect::<Vec<_>>(),
            "map": float(self.map),
            "map_base": opt(self.map_base),
            "map_novel": opt(self.map_novel),
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp, "fn": self.counts.fn_},
            "per_class": per_class,
        });
        if let Some(vm) = &self.vocabulary_maps {
            v["vocabulary_maps"] = Value::Array(vm.iter().map(|m| float(*m)).collect());
        }
        v
    }

    /// Fixed-width summary table.
    pub fn to_text_table(&self) -> String {
        let col = |thr: f64| self.iou_thresholds.iter().position(|t| (t - thr).abs() < 1e-9);
        let ap50 = col(0.5);
        let ap75 = col(0.75);
        let cell = |v: Option<f64>| v.map_or("       -".to_string(), |x| format!("{x:>8.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "protocol: {}", self.protocol.as_str());
        let _ = writeln!(
            out,
            "{:>8}  {:<6}  {:>6}  {:>8}  {:>8}  {:>8}  name",
            "class", "split", "n_gt", "AP50", "AP75", "AP"
        );
        for c in &self.per_class {
            let mean = (c.n_gt > 0).then(|| {
                c.ap.iter().map(|v| v.unwrap_or(0.0)).sum::<f64>() / c.ap.len().max(1) as f64
            });
            let _ = writeln!(
                out,
                "{:>8}  {:<6}  {:>6}  {}  {}  {}  {}",
                c.class_id,
                match c.novelty {
                    Novelty::Base => "base",
                    Novelty::Novel => "novel",
                },
                c.n_gt,
                cell(ap50.and_then(|i| c.ap[i])),
                cell(ap75.and_then(|i| c.ap[i])),
                cell(mean),
                c.name
            );
        }
        let _ = writeln!(out, "mAP        {:.6}", self.map);
        let _ = writeln!(out, "mAP_base   {}", self.map_base.map_or("-".into(), |v| format!("{v:.6}")));
        let _ = writeln!(out, "mAP_novel  {}", self.map_novel.map_or("-".into(), |v| format!("{v:.6}")));
        if let Some(vm) = &self.vocabulary_maps {
            for (i, m) in vm.iter().enumerate() {
                let _ = writeln!(out, "vocab[{i}]   {m:.6}");
            }
        }
        let _ = writeln!(
            out,
            "TP {}  FP {}  FN {}  (IoU {:.2})",
            self.counts.tp,
            self.counts.fp,
            self.counts.fn_,
            self.iou_thresholds.first().copied().unwrap_or(0.0)
        );
        out
    }
}

pub(crate) fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("at least one IoU threshold is required".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::InvalidConfig(format!("IoU threshold {t} outside (0, 1]")));
    }
    Ok(())
}

fn evaluate_class<T: Scalar>(
    class: &ClassEntry,
    images: &BTreeSet<u64>,
    gts: &BTreeMap<u64, Vec<GroundTruth<T>>>,
    preds: &BTreeMap<u64, Vec<Prediction<T>>>,
    thresholds: &[f64],
) -> ClassAp {
    let n_gt: usize = gts.values().map(Vec::len).sum();
    let mut ap = Vec::with_capacity(thresholds.len());
    let mut counts = Vec::with_capacity(thresholds.len());
    let mut first_curve = None;
    for &thr in thresholds {
        let mut pooled = Vec::new();
        let mut c = Counts::default();
        for image_id in images {
            let cell_preds = preds.get(image_id).map_or(&[][..], Vec::as_slice);
            let cell_gts = gts.get(image_id).map_or(&[][..], Vec::as_slice);
            let m = match_greedy(cell_preds, cell_gts, thr);
            c.tp += m.true_positives();
            c.fp += m.false_positives.len();
            c.fn_ += m.false_negatives.len();
            let flags = m.tp_flags(cell_preds.len());
            pooled.extend(cell_preds.iter().enumerate().map(|(i, p)| PooledDetection {
                score: p.score.to_f64_exact(),
                image_id: *image_id,
                index: i,
                tp: flags[i],
            }));
        }
        let curve = pr_curve(pooled, n_gt);
        ap.push((n_gt > 0).then(|| average_precision(&curve)));
        counts.push(c);
        if first_curve.is_none() {
            first_curve = Some(curve);
        }
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
}

/// COCO-style mAP treating each prediction's `caption_class_id` as its class.
///
/// Every (class, threshold) cell is independent; cells run on the current
/// rayon pool and are reduced in class-id order, so the result does not
/// depend on the worker count.
pub fn coco_map<T: Scalar>(
    ds: &Dataset<T>,
    preds: &[Prediction<T>],
    iou_thresholds: &[f64],
) -> Result<EvalReport> {
    coco_map_tagged(ds, preds, iou_thresholds, ProtocolTag::Supervised)
}

pub(crate) fn coco_map_tagged<T: Scalar>(
    ds: &Dataset<T>,
    preds: &[Prediction<T>],
    iou_thresholds: &[f64],
    protocol: ProtocolTag,
) -> Result<EvalReport> {
    validate_thresholds(iou_thresholds)?;
    if ds.ground_truth.is_empty() {
        return Err(Error::EmptyDataset);
    }

    type Cells<R> = BTreeMap<u64, BTreeMap<u64, Vec<R>>>;
    let mut gt_cells: Cells<GroundTruth<T>> = BTreeMap::new();
    for gt in &ds.ground_truth {
        gt_cells
            .entry(gt.class_id)
            .or_default()
            .entry(gt.image_id)
            .or_default()
            .push(gt.clone());
    }
    let mut pred_cells: Cells<Prediction<T>> = BTreeMap::new();
    for p in preds {
        pred_cells
            .entry(p.caption_class_id)
            .or_default()
            .entry(p.image_id)
            .or_default()
            .push(p.clone());
    }

    let mut classes: Vec<&ClassEntry> = ds.classes.iter().collect();
    classes.sort_by_key(|c| c.id);
    let empty_gt = BTreeMap::new();
    let empty_pred = BTreeMap::new();
    let per_class: Vec<ClassAp> = classes
        .par_iter()
        .map(|class| {
            let gts = gt_cells.get(&class.id).unwrap_or(&empty_gt);
            let ps = pred_cells.get(&class.id).unwrap_or(&empty_pred);
            let images: BTreeSet<u64> = gts.keys().chain(ps.keys()).copied().collect();
            evaluate_class(class, &images, gts, ps, iou_thresholds)
        })
        .collect();

    Ok(EvalReport::from_classes(
        protocol,
        iou_thresholds.to_vec(),
        per_class,
    ))
}
