mod oracle;
mod support;

use std::collections::BTreeSet;

use ovdbench::protocols::{
    eval_3fovd, eval_fgovd, eval_supervised, parse_grounding, CaptionDetection, CaptionGroup, CaptionScores,
    ProtocolConfig,
};
use ovdbench::{BBox, Dataset, GroundTruth, Prediction};
use proptest::prelude::*;
use serde_json::json;

use oracle::{grid_ap, ref_iou};
use support::{class_entry, image};

fn cell_box(cell: u64) -> BBox {
    let (cx, cy) = ((cell % 2) as f64 * 16.0, (cell / 2) as f64 * 16.0);
    BBox::new(cx + 2.0, cy + 2.0, cx + 12.0, cy + 12.0)
}

/// Gts on a 2x2 grid per image; at most one prediction per (image, cell,
/// class) so class-wise NMS has nothing to remove.
fn arb_clean_instance() -> impl Strategy<Value = (Vec<GroundTruth>, Vec<Prediction>)> {
    let gt = (1u64..=2, 0u64..4, 1u64..=3);
    let det = (1u64..=2, 0u64..4, 1u64..=3, -3i64..=3, -3i64..=3, 1u32..=10);
    (prop::collection::vec(gt, 1..=8), prop::collection::vec(det, 0..=10)).prop_map(|(gts, dets)| {
        let mut seen = BTreeSet::new();
        let gts = gts
            .into_iter()
            .filter(|k| seen.insert(*k))
            .map(|(image_id, cell, class_id)| GroundTruth {
                image_id,
                bbox: cell_box(cell),
                class_id,
            })
            .collect();
        let mut seen = BTreeSet::new();
        let preds = dets
            .into_iter()
            .filter(|(i, c, k, ..)| seen.insert((*i, *c, *k)))
            .map(|(image_id, cell, class, dx, dy, s)| {
                let b = cell_box(cell);
                let (dx, dy) = (dx as f64, dy as f64);
                Prediction {
                    image_id,
                    bbox: BBox::new(b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy),
                    score: s as f64 / 10.0,
                    token: format!("Class{class}"),
                    caption_class_id: class,
                }
            })
            .collect();
        (gts, preds)
    })
}

fn dataset(gts: Vec<GroundTruth>) -> Dataset {
    Dataset::from_parts((1..=2).map(image).collect(), (1..=3).map(class_entry).collect(), gts).unwrap()
}

/// Groups over the objects of `ds`, one negative each, plus a score table.
fn groups_and_scores(
    ds: &Dataset,
    raw: &[(u32, u32, i64, bool)],
) -> (Vec<CaptionGroup>, CaptionScores) {
    let mut groups = Vec::new();
    let mut scores = CaptionScores::new();
    let mut gi = 0;
    for img in &ds.images {
        for (ordinal, &g) in ds.gts_of_image(img.id).iter().enumerate() {
            let Some(&(pos, neg, shift, present)) = raw.get(gi) else { break };
            let class = ds.class(ds.ground_truth[g].class_id).unwrap();
            groups.push(CaptionGroup {
                image_id: img.id,
                gt_index: ordinal,
                positive: class.caption.clone(),
                negatives: vec![class.caption.replace("green", "red")],
                vocabulary: 0,
            });
            if present {
                let b = ds.ground_truth[g].bbox;
                let s = shift as f64;
                let bbox = BBox::new(b.x_min + s, b.y_min, b.x_max + s, b.y_max);
                scores.insert((gi, 0), CaptionDetection { bbox, score: pos as f64 / 100.0 });
                scores.insert((gi, 1), CaptionDetection { bbox, score: neg as f64 / 100.0 });
            }
            gi += 1;
        }
    }
    (groups, scores)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn caption_protocol_equals_supervised_on_relabelled_boxes((gts, preds) in arb_clean_instance()) {
        let ds = dataset(gts);
        let caption = eval_3fovd(&ds, &preds, &ProtocolConfig::three_f_ovd(None)).unwrap();
        let closed = eval_supervised(&ds, &preds, &ProtocolConfig::supervised()).unwrap();
        prop_assert_eq!(caption.map, closed.map);
        prop_assert_eq!(caption.per_class, closed.per_class);
    }

    #[test]
    fn fgovd_invariant_under_monotone_rescoring(
        gts in prop::collection::vec((1u64..=2, 0u64..4, 1u64..=3), 1..=8),
        raw in prop::collection::vec((1u32..=99, 1u32..=99, -6i64..=6, any::<bool>()), 8),
    ) {
        let mut seen = BTreeSet::new();
        let gts: Vec<GroundTruth> = gts.into_iter().filter(|k| seen.insert(*k)).map(|(image_id, cell, class_id)| GroundTruth {
            image_id, bbox: cell_box(cell), class_id,
        }).collect();
        let ds = dataset(gts);
        let (groups, scores) = groups_and_scores(&ds, &raw);
        let cfg = ProtocolConfig::fg_ovd(1, 1);
        let base = eval_fgovd(&ds, &groups, &scores, &cfg).unwrap();
        let f = |x: f64| (x.powi(3) + 0.25 * x).exp();
        let rescored: CaptionScores = scores
            .iter()
            .map(|(k, d)| (*k, CaptionDetection { bbox: d.bbox, score: f(d.score) }))
            .collect();
        let after = eval_fgovd(&ds, &groups, &rescored, &cfg).unwrap();
        prop_assert_eq!(base.map, after.map);
        prop_assert_eq!(base.counts, after.counts);
    }

    #[test]
    fn fgovd_matches_hand_pooled_ap(
        classes in prop::collection::vec(1u64..=1, 3),
        raw in prop::collection::vec((1u32..=99, 1u32..=99, -6i64..=6, Just(true)), 3),
    ) {
        // three objects of one class in distinct cells, distinct scores
        let gts: Vec<GroundTruth> = classes.iter().enumerate().map(|(i, &c)| GroundTruth {
            image_id: 1, bbox: cell_box(i as u64), class_id: c,
        }).collect();
        let ds = dataset(gts);
        let mut raw = raw;
        for (i, r) in raw.iter_mut().enumerate() {
            // keep the winning scores distinct across groups
            r.0 = r.0 / 4 * 4 + i as u32;
            r.1 = r.1 / 4 * 4 + i as u32;
        }
        let (groups, scores) = groups_and_scores(&ds, &raw);
        let r = eval_fgovd(&ds, &groups, &scores, &ProtocolConfig::FgOvd {
            iou_thresholds: vec![0.5], negatives_per_positive: 1, vocabularies: 1,
        }).unwrap();

        let mut outcomes: Vec<(f64, bool)> = (0..3).map(|g| {
            let pos = scores[&(g, 0)];
            let neg = scores[&(g, 1)];
            let gt = ds.ground_truth[g].bbox.to_array();
            if pos.score >= neg.score {
                (pos.score, ref_iou(pos.bbox.to_array(), gt) >= 0.5)
            } else {
                (neg.score, false)
            }
        }).collect();
        outcomes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let ranked: Vec<bool> = outcomes.iter().map(|o| o.1).collect();
        prop_assert!((r.map - grid_ap(&ranked, 3)).abs() <= 1e-9);
    }
}

#[test]
fn grounding_ignores_attached_scores() {
    let ds = dataset(vec![GroundTruth { image_id: 1, bbox: cell_box(0), class_id: 1 }]);
    let with = |score: f64| {
        json!([
            {"image_id": 1, "caption": "the green bag", "gt_bbox": [2, 2, 12, 12], "answers": [[2, 2, 12, 11]], "score": score},
            {"image_id": 2, "caption": "the red bag", "gt_bbox": [2, 2, 12, 12], "answers": [[20, 20, 30, 30]]}
        ])
    };
    let (q1, a1) = parse_grounding("a.json", &with(0.99), &ds).unwrap();
    let (q2, a2) = parse_grounding("b.json", &with(0.01), &ds).unwrap();
    let r1 = ovdbench::protocols::eval_ovvg(&q1, &a1, 0.5).unwrap();
    let r2 = ovdbench::protocols::eval_ovvg(&q2, &a2, 0.5).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1.correct, 1);
}
