//! Brute-force reference implementations, written without reusing any of
//! the library's geometry, matching or metric code.
#![allow(dead_code)]

/// Pixel-counting areas for integer boxes `[x0, y0, x1, y1]`: a pixel
/// `(x, y)` belongs to a box when `x0 <= x < x1` and `y0 <= y < y1`.
pub fn raster_counts(a: [i64; 4], b: [i64; 4]) -> (u64, u64, u64) {
    let inside = |r: [i64; 4], x: i64, y: i64| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let lo_x = a[0].min(b[0]);
    let hi_x = a[2].max(b[2]);
    let lo_y = a[1].min(b[1]);
    let hi_y = a[3].max(b[3]);
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for x in lo_x..hi_x {
        for y in lo_y..hi_y {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            na += ia as u64;
            nb += ib as u64;
            both += (ia && ib) as u64;
        }
    }
    (na, nb, both)
}

/// `(iou, overlap of a onto b)` by pixel counting.
pub fn raster_iou_overlap(a: [i64; 4], b: [i64; 4]) -> (f64, f64) {
    let (na, nb, both) = raster_counts(a, b);
    let union = na + nb - both;
    let iou = if union == 0 { 0.0 } else { both as f64 / union as f64 };
    let overlap = if na == 0 { 0.0 } else { both as f64 / na as f64 };
    (iou, overlap)
}

/// IoU for real-valued corner boxes from first principles.
pub fn ref_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct RefDet {
    pub image: u64,
    pub class: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct RefGt {
    pub image: u64,
    pub class: u64,
    pub bbox: [f64; 4],
}

/// Replays COCO greedy matching for one cell; returns a TP flag per
/// detection in the order given.
pub fn ref_match(dets: &[([f64; 4], f64)], gts: &[[f64; 4]], thr: f64) -> Vec<bool> {
    let mut visit: Vec<usize> = (0..dets.len()).collect();
    // bubble sort: descending score, ascending index on ties
    for i in 0..visit.len() {
        for j in 0..visit.len() - 1 - i {
            let (a, b) = (visit[j], visit[j + 1]);
            if dets[b].1 > dets[a].1 || (dets[b].1 == dets[a].1 && b < a) {
                visit.swap(j, j + 1);
            }
        }
    }
    let mut used = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for d in visit {
        let mut pick: Option<usize> = None;
        let mut pick_iou = -1.0;
        for g in 0..gts.len() {
            if used[g] {
                continue;
            }
            let v = ref_iou(dets[d].0, gts[g]);
            if v >= thr && v > pick_iou {
                pick = Some(g);
                pick_iou = v;
            }
        }
        if let Some(g) = pick {
            used[g] = true;
            tp[d] = true;
        }
    }
    tp
}

/// 101-point AP straight from the definition: for each recall level r,
/// the maximum precision over all ranks whose recall is at least r.
pub fn grid_ap(ranked_tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut prs = Vec::new();
    let mut tp = 0usize;
    for (k, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        prs.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let best = prs
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        total += best;
    }
    total / 101.0
}

/// AP of one class at one threshold. Pooled ranking: score descending,
/// then image id, then position of the detection within its image.
pub fn ref_class_ap(dets: &[RefDet], gts: &[RefGt], class: u64, thr: f64) -> Option<f64> {
    let n_gt = gts.iter().filter(|g| g.class == class).count();
    if n_gt == 0 {
        return None;
    }
    let mut images: Vec<u64> = dets
        .iter()
        .filter(|d| d.class == class)
        .map(|d| d.image)
        .collect();
    images.sort();
    images.dedup();
    let mut pooled: Vec<(f64, u64, usize, bool)> = Vec::new();
    for img in images {
        let cell: Vec<([f64; 4], f64)> = dets
            .iter()
            .filter(|d| d.class == class && d.image == img)
            .map(|d| (d.bbox, d.score))
            .collect();
        let cell_gts: Vec<[f64; 4]> = gts
            .iter()
            .filter(|g| g.class == class && g.image == img)
            .map(|g| g.bbox)
            .collect();
        let flags = ref_match(&cell, &cell_gts, thr);
        for (i, f) in flags.into_iter().enumerate() {
            pooled.push((cell[i].1, img, i, f));
        }
    }
    pooled.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let ranked: Vec<bool> = pooled.iter().map(|p| p.3).collect();
    Some(grid_ap(&ranked, n_gt))
}

/// mAP over thresholds: per class, mean AP across thresholds; then mean
/// over classes that have ground truth. Returns 0 without such classes.
pub fn ref_map(dets: &[RefDet], gts: &[RefGt], classes: &[u64], thresholds: &[f64]) -> f64 {
    let mut per_class = Vec::new();
    for &c in classes {
        let aps: Vec<f64> = thresholds
            .iter()
            .filter_map(|&t| ref_class_ap(dets, gts, c, t))
            .collect();
        if !aps.is_empty() {
            per_class.push(aps.iter().sum::<f64>() / aps.len() as f64);
        }
    }
    if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

/// 0.50, 0.55, ..., 0.95, each the correctly rounded decimal.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}
