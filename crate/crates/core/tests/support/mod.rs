//! Fixture builders and proptest strategies shared by the integration tests.
#![allow(dead_code)]

use ovdbench::{BBox, ClassEntry, Dataset, GroundTruth, ImageRecord, Novelty, Prediction};
use proptest::prelude::*;

use crate::oracle::{RefDet, RefGt};

pub const IMAGE_SIDE: u32 = 32;

/// Small random detection instance in the reference representation.
#[derive(Debug, Clone)]
pub struct Instance {
    pub images: u64,
    pub classes: u64,
    pub gts: Vec<RefGt>,
    pub dets: Vec<RefDet>,
}

pub fn arb_int_box(max_coord: i64, max_side: i64) -> impl Strategy<Value = [f64; 4]> {
    (0..max_coord, 0..max_coord, 1..=max_side, 1..=max_side).prop_map(move |(x, y, w, h)| {
        let x1 = (x + w).min(IMAGE_SIDE as i64);
        let y1 = (y + h).min(IMAGE_SIDE as i64);
        [x as f64, y as f64, x1 as f64, y1 as f64]
    })
}

/// At most 4 images, 3 classes, 8 gt boxes and 8 detections; coarse
/// coordinates and scores so that ties and threshold-exact IoUs occur.
pub fn arb_instance() -> impl Strategy<Value = Instance> {
    (1u64..=4, 1u64..=3).prop_flat_map(|(images, classes)| {
        let gt = (1..=images, 1..=classes, arb_int_box(20, 12))
            .prop_map(|(image, class, bbox)| RefGt { image, class, bbox });
        let det = (1..=images, 1..=classes, arb_int_box(20, 12), 1u32..=10).prop_map(
            |(image, class, bbox, s)| RefDet {
                image,
                class,
                bbox,
                score: s as f64 / 10.0,
            },
        );
        (
            Just(images),
            Just(classes),
            prop::collection::vec(gt, 1..=8),
            prop::collection::vec(det, 0..=8),
        )
            .prop_map(|(images, classes, gts, dets)| Instance {
                images,
                classes,
                gts,
                dets,
            })
    })
}

pub fn class_entry(id: u64) -> ClassEntry {
    ClassEntry {
        id,
        name: format!("Class{id}"),
        caption: format!("a green class{id} bag with text"),
        coarse_class_id: 1,
        novelty: if id % 2 == 1 { Novelty::Base } else { Novelty::Novel },
    }
}

pub fn image(id: u64) -> ImageRecord {
    ImageRecord {
        id,
        width: IMAGE_SIDE,
        height: IMAGE_SIDE,
        timestamp: None,
        sequence_id: None,
    }
}

pub fn to_bbox(a: [f64; 4]) -> BBox {
    BBox::new(a[0], a[1], a[2], a[3])
}

impl Instance {
    pub fn dataset(&self) -> Dataset {
        Dataset::from_parts(
            (1..=self.images).map(image).collect(),
            (1..=self.classes).map(class_entry).collect(),
            self.gts
                .iter()
                .map(|g| GroundTruth {
                    image_id: g.image,
                    bbox: to_bbox(g.bbox),
                    class_id: g.class,
                })
                .collect(),
        )
        .expect("valid instance")
    }

    pub fn predictions(&self) -> Vec<Prediction> {
        self.dets
            .iter()
            .map(|d| Prediction {
                image_id: d.image,
                bbox: to_bbox(d.bbox),
                score: d.score,
                token: format!("class{}", d.class),
                caption_class_id: d.class,
            })
            .collect()
    }

    pub fn class_ids(&self) -> Vec<u64> {
        (1..=self.classes).collect()
    }
}

/// Predictions of one caption in one image.
pub fn arb_caption_cell(max_len: usize) -> impl Strategy<Value = Vec<Prediction>> {
    let pred = (0i64..2400, 0i64..2200, 1i64..=2400, 1i64..=2200, 0u32..=20).prop_map(
        |(x, y, w, h, s)| Prediction {
            image_id: 1,
            bbox: BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64),
            score: s as f64 / 20.0,
            token: "text".into(),
            caption_class_id: 1,
        },
    );
    prop::collection::vec(pred, 0..=max_len)
}
