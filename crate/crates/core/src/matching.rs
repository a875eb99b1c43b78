//! Greedy prediction-to-ground-truth assignment for one (image, class) cell.

use crate::datamodel::{GroundTruth, Prediction};
use crate::geometry::{iou, BBox};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(prediction index, gt index, iou)` in the order the matches were made.
    pub matched_pairs: Vec<(usize, usize, f64)>,
    /// Unmatched prediction indices, ascending.
    pub false_positives: Vec<usize>,
    /// Unmatched gt indices, ascending.
    pub false_negatives: Vec<usize>,
    pub iou_threshold: f64,
}

impl MatchResult {
    /// Per-prediction true-positive flags, indexed like the input.
    pub fn tp_flags(&self, n_preds: usize) -> Vec<bool> {
        let mut flags = vec![false; n_preds];
        for &(p, _, _) in &self.matched_pairs {
            flags[p] = true;
        }
        flags
    }

    pub fn true_positives(&self) -> usize {
        self.matched_pairs.len()
    }
}

/// Indices sorted by descending score, ties by ascending index.
pub(crate) fn score_order<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Matches scored boxes against gt boxes.
///
/// Predictions are visited by descending score; each claims the unmatched gt
/// with the highest IoU (lowest index on ties) if that IoU reaches the
/// threshold.
pub fn match_boxes<T: Scalar>(
    pred_boxes: &[BBox<T>],
    pred_scores: &[T],
    gt_boxes: &[BBox<T>],
    iou_threshold: f64,
) -> MatchResult {
    assert_eq!(pred_boxes.len(), pred_scores.len());
    let mut gt_taken = vec![false; gt_boxes.len()];
    let mut pred_matched = vec![false; pred_boxes.len()];
    let mut matched_pairs = Vec::new();

    for p in score_order(pred_scores) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gt_boxes.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            let overlap = iou(&pred_boxes[p], gt).to_f64_exact();
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, overlap)) = best {
            gt_taken[g] = true;
            pred_matched[p] = true;
            matched_pairs.push((p, g, overlap));
        }
    }

    MatchResult {
        matched_pairs,
        false_positives: (0..pred_boxes.len()).filter(|&p| !pred_matched[p]).collect(),
        false_negatives: (0..gt_boxes.len()).filter(|&g| !gt_taken[g]).collect(),
        iou_threshold,
    }
}

/// Matches predictions of one image and class against that cell's gts.
pub fn match_greedy<T: Scalar>(
    preds: &[Prediction<T>],
    gts: &[GroundTruth<T>],
    iou_threshold: f64,
) -> MatchResult {
    let boxes: Vec<BBox<T>> = preds.iter().map(|p| p.bbox).collect();
    let scores: Vec<T> = preds.iter().map(|p| p.score).collect();
    let gt_boxes: Vec<BBox<T>> = gts.iter().map(|g| g.bbox).collect();
    match_boxes(&boxes, &scores, &gt_boxes, iou_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1)
    }

    #[test]
    fn exact_match() {
        let r = match_boxes(&[b(0., 0., 10., 10.)], &[0.9], &[b(0., 0., 10., 10.)], 0.5);
        assert_eq!(r.matched_pairs, vec![(0, 0, 1.0)]);
        assert!(r.false_positives.is_empty() && r.false_negatives.is_empty());
    }

    #[test]
    fn below_threshold_is_fp_and_fn() {
        // 40 / 100 overlap
        let r = match_boxes(&[b(0., 0., 10., 4.)], &[0.9], &[b(0., 0., 10., 10.)], 0.5);
        assert!(r.matched_pairs.is_empty());
        assert_eq!(r.false_positives, vec![0]);
        assert_eq!(r.false_negatives, vec![0]);
    }

    #[test]
    fn higher_score_claims_the_gt() {
        // Enumerating both assignments: only one pred can hold the single gt,
        // and the greedy visit order gives it to the 0.9 prediction.
        let gt = [b(0., 0., 10., 10.)];
        let preds = [b(0., 0., 10., 9.), b(0., 0., 10., 10.)];
        let r = match_boxes(&preds, &[0.8, 0.9], &gt, 0.5);
        assert_eq!(r.matched_pairs.len(), 1);
        assert_eq!(r.matched_pairs[0].0, 1);
        assert_eq!(r.false_positives, vec![0]);
    }

    #[test]
    fn equal_iou_prefers_lower_gt_index() {
        let gts = [b(0., 0., 10., 10.), b(0., 0., 10., 10.)];
        let r = match_boxes(&[b(0., 0., 10., 10.)], &[0.5], &gts, 0.5);
        assert_eq!(r.matched_pairs[0].1, 0);
        assert_eq!(r.false_negatives, vec![1]);
    }

    #[test]
    fn equal_scores_visit_in_input_order() {
        let gts = [b(0., 0., 10., 10.)];
        let preds = [b(0., 0., 10., 10.), b(0., 0., 10., 10.)];
        let r = match_boxes(&preds, &[0.5, 0.5], &gts, 0.5);
        assert_eq!(r.matched_pairs[0].0, 0);
    }
}
