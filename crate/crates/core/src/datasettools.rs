//! Leakage-safe train/val/test splitting and dataset statistics.
//!
//! Video frames captured within `gap` seconds of each other must land in
//! the same split. Frames are chained into clusters (two frames share a
//! cluster when a sequence of pairwise gaps of at most `gap` connects them)
//! and clusters are assigned whole.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::datamodel::{Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::json::float;
use crate::scalar::Scalar;

pub const DEFAULT_GAP_SECONDS: f64 = 5.0;

/// Allowed deviation of achieved from target ratios, as a fraction of all images.
pub const RATIO_TOLERANCE: f64 = 0.02;

/// Image counts of the published vehicle split (train:val:test).
pub const VEHICLE_SPLIT_COUNTS: [f64; 3] = [64658.0, 12903.0, 11802.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<u64, SplitName>,
    pub achieved_ratios: [f64; 3],
    pub target_ratios: [f64; 3],
    pub cluster_count: usize,
}

impl SplitAssignment {
    /// Image ids of one split, ascending.
    pub fn ids(&self, split: SplitName) -> Vec<u64> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for s in self.assignment.values() {
            sizes[s.index()] += 1;
        }
        sizes
    }

    /// Largest absolute gap between achieved and target ratio.
    pub fn max_ratio_error(&self) -> f64 {
        (0..3)
            .map(|i| (self.achieved_ratios[i] - self.target_ratios[i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn within_tolerance(&self) -> bool {
        self.max_ratio_error() <= RATIO_TOLERANCE
    }

    /// `splits.json` body.
    pub fn to_json_value(&self, gap_seconds: f64, seed: u64) -> Value {
        json!({
            "train": self.ids(SplitName::Train),
            "val": self.ids(SplitName::Val),
            "test": self.ids(SplitName::Test),
            "gap_seconds": float(gap_seconds),
            "seed": seed,
        })
    }
}

/// Groups frames into chains of consecutive gaps no larger than `gap`.
///
/// Images without a sequence id form singleton clusters. Each cluster is
/// sorted by id and clusters are ordered by their smallest id.
pub fn temporal_clusters(images: &[ImageRecord], gap: f64) -> Vec<Vec<u64>> {
    let mut sequences: BTreeMap<u64, Vec<(f64, u64)>> = BTreeMap::new();
    let mut clusters: Vec<Vec<u64>> = Vec::new();
    for img in images {
        match (img.sequence_id, img.timestamp) {
            (Some(seq), Some(t)) => sequences.entry(seq).or_default().push((t, img.id)),
            _ => clusters.push(vec![img.id]),
        }
    }
    for frames in sequences.values_mut() {
        frames.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut current = vec![frames[0].1];
        for pair in frames.windows(2) {
            if pair[1].0 - pair[0].0 <= gap {
                current.push(pair[1].1);
            } else {
                clusters.push(std::mem::take(&mut current));
                current.push(pair[1].1);
            }
        }
        clusters.push(current);
    }
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Parses `a:b:c` into ratios summing to one.
pub fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!(
            "ratios {text:?} must have the form a:b:c"
        )));
    }
    let mut raw = [0.0; 3];
    for (slot, part) in raw.iter_mut().zip(&parts) {
        *slot = part.trim().parse::<f64>().map_err(|_| {
            Error::InvalidConfig(format!("ratio component {part:?} is not a number"))
        })?;
    }
    normalize_ratios(raw)
}

pub fn normalize_ratios(raw: [f64; 3]) -> Result<[f64; 3]> {
    if raw.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ratios {raw:?} must be finite and non-negative"
        )));
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidConfig("ratios must not all be zero".into()));
    }
    Ok(raw.map(|r| r / total))
}

/// Assigns whole clusters to train/val/test.
///
/// Clusters are visited largest first (equal sizes in seed-shuffled order);
/// each goes to the split with the largest remaining image deficit, lower
/// split index first on ties.
pub fn split(clusters: &[Vec<u64>], target_ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if (target_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
        || target_ratios.iter().any(|r| !r.is_finite() || *r < 0.0)
    {
        return Err(Error::InvalidConfig(format!(
            "target ratios {target_ratios:?} must be non-negative and sum to 1"
        )));
    }
    let total: usize = clusters.iter().map(Vec::len).sum();
    let total_f = total as f64;
    let largest_target = target_ratios.iter().copied().fold(0.0, f64::max);
    // A split can absorb one image beyond its fractional target.
    let limit = largest_target * total_f + (RATIO_TOLERANCE * total_f).max(1.0);
    if let Some(c) = clusters.iter().find(|c| c.len() as f64 > limit) {
        return Err(Error::Infeasible {
            cluster_size: c.len(),
            limit,
        });
    }

    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| clusters[b].len().cmp(&clusters[a].len()));

    let targets = target_ratios.map(|r| r * total_f);
    let mut filled = [0usize; 3];
    let mut assignment = BTreeMap::new();
    for ci in order {
        let mut best = 0;
        for s in 1..3 {
            if targets[s] - filled[s] as f64 > targets[best] - filled[best] as f64 {
                best = s;
            }
        }
        filled[best] += clusters[ci].len();
        for &id in &clusters[ci] {
            assignment.insert(id, SplitName::ALL[best]);
        }
    }
    let achieved_ratios = if total == 0 {
        [0.0; 3]
    } else {
        filled.map(|f| f as f64 / total_f)
    };
    Ok(SplitAssignment {
        assignment,
        achieved_ratios,
        target_ratios,
        cluster_count: clusters.len(),
    })
}

/// Same-sequence frame pairs within `gap` seconds that ended up in
/// different splits. Checked pairwise, independent of the clustering.
pub fn leakage_violations(
    images: &[ImageRecord],
    assignment: &SplitAssignment,
    gap: f64,
) -> Vec<(u64, u64)> {
    let mut sequences: BTreeMap<u64, Vec<(f64, u64)>> = BTreeMap::new();
    for img in images {
        if let (Some(seq), Some(t)) = (img.sequence_id, img.timestamp) {
            sequences.entry(seq).or_default().push((t, img.id));
        }
    }
    let mut violations = Vec::new();
    for frames in sequences.values_mut() {
        frames.sort_by(|a, b| a.0.total_cmp(&b.0));
        for i in 0..frames.len() {
            for j in i + 1..frames.len() {
                if frames[j].0 - frames[i].0 > gap {
                    break;
                }
                let (a, b) = (frames[i].1, frames[j].1);
                if assignment.assignment.get(&a) != assignment.assignment.get(&b) {
                    violations.push((a.min(b), a.max(b)));
                }
            }
        }
    }
    violations
}

/// Per class, the number of distinct images containing it, most frequent
/// first (ties by ascending class id). Classes without boxes count zero.
pub fn class_distribution<T: Scalar>(ds: &Dataset<T>) -> Vec<(u64, usize)> {
    let mut images: BTreeMap<u64, BTreeSet<u64>> =
        ds.classes.iter().map(|c| (c.id, BTreeSet::new())).collect();
    for gt in &ds.ground_truth {
        images.entry(gt.class_id).or_default().insert(gt.image_id);
    }
    let mut out: Vec<(u64, usize)> = images.into_iter().map(|(c, s)| (c, s.len())).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{ClassEntry, GroundTruth, Novelty};
    use crate::geometry::BBox;

    fn frame(id: u64, seq: u64, t: f64) -> ImageRecord {
        ImageRecord {
            id,
            width: 10,
            height: 10,
            timestamp: Some(t),
            sequence_id: Some(seq),
        }
    }

    fn still(id: u64) -> ImageRecord {
        ImageRecord {
            id,
            width: 10,
            height: 10,
            timestamp: None,
            sequence_id: None,
        }
    }

    #[test]
    fn gap_splits_clusters() {
        let imgs = [frame(1, 0, 0.0), frame(2, 0, 3.0), frame(3, 0, 10.0)];
        assert_eq!(temporal_clusters(&imgs, 5.0), vec![vec![1, 2], vec![3]]);
    }

    #[test]
    fn chains_are_transitive() {
        let imgs = [frame(1, 0, 0.0), frame(2, 0, 4.0), frame(3, 0, 8.0)];
        assert_eq!(temporal_clusters(&imgs, 5.0), vec![vec![1, 2, 3]]);
    }

    #[test]
    fn sequences_do_not_mix() {
        let imgs = [frame(1, 0, 0.0), frame(2, 1, 1.0), still(3)];
        assert_eq!(temporal_clusters(&imgs, 5.0), vec![vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn empty_input() {
        assert!(temporal_clusters(&[], 5.0).is_empty());
        let a = split(&[], [0.8, 0.1, 0.1], 0).unwrap();
        assert!(a.assignment.is_empty());
    }

    #[test]
    fn singletons_divide_exactly() {
        let clusters: Vec<Vec<u64>> = (0..10).map(|i| vec![i]).collect();
        let a = split(&clusters, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(a.sizes(), [8, 1, 1]);
        assert!(a.max_ratio_error() < 1e-12);
    }

    #[test]
    fn cluster_stays_together() {
        let imgs = [frame(1, 0, 0.0), frame(2, 0, 3.0)];
        let clusters = temporal_clusters(&imgs, 5.0);
        let a = split(&clusters, [0.5, 0.5, 0.0], 1).unwrap();
        assert_eq!(a.assignment[&1], a.assignment[&2]);
        assert!(leakage_violations(&imgs, &a, 5.0).is_empty());
    }

    #[test]
    fn oversized_cluster_is_infeasible() {
        let mut clusters = vec![(0..50).collect::<Vec<u64>>()];
        clusters.extend((50..100).map(|i| vec![i]));
        assert!(matches!(
            split(&clusters, [0.34, 0.33, 0.33], 0),
            Err(Error::Infeasible { cluster_size: 50, .. })
        ));
    }

    #[test]
    fn ratios_parse_and_normalise() {
        let r = parse_ratios("64658:12903:11802").unwrap();
        assert!((r[0] - 0.7235).abs() < 1e-3);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(parse_ratios("1:2").is_err());
        assert!(parse_ratios("1:x:2").is_err());
        assert!(parse_ratios("0:0:0").is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let clusters: Vec<Vec<u64>> = (0..40).map(|i| (i * 3..i * 3 + 1 + i % 3).collect()).collect();
        let a = split(&clusters, [0.7, 0.2, 0.1], 9).unwrap();
        let b = split(&clusters, [0.7, 0.2, 0.1], 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn leakage_check_catches_violations() {
        let imgs = [frame(1, 0, 0.0), frame(2, 0, 4.0)];
        let mut assignment = BTreeMap::new();
        assignment.insert(1, SplitName::Train);
        assignment.insert(2, SplitName::Test);
        let a = SplitAssignment {
            assignment,
            achieved_ratios: [0.5, 0.0, 0.5],
            target_ratios: [0.5, 0.0, 0.5],
            cluster_count: 2,
        };
        assert_eq!(leakage_violations(&imgs, &a, 5.0), vec![(1, 2)]);
    }

    fn class(id: u64) -> ClassEntry {
        ClassEntry {
            id,
            name: format!("c{id}"),
            caption: format!("class {id}"),
            coarse_class_id: 0,
            novelty: Novelty::Base,
        }
    }

    #[test]
    fn distribution_counts_images() {
        let empty: Dataset = Dataset::from_parts(vec![], vec![], vec![]).unwrap();
        assert!(class_distribution(&empty).is_empty());

        let gt = |image_id, class_id| GroundTruth {
            image_id,
            bbox: BBox::new(0., 0., 1., 1.),
            class_id,
        };
        let ds: Dataset = Dataset::from_parts(
            vec![still(1), still(2), still(3)],
            vec![class(2), class(1)],
            vec![gt(1, 1), gt(1, 1), gt(2, 1), gt(3, 1), gt(3, 2)],
        )
        .unwrap();
        assert_eq!(class_distribution(&ds), vec![(1, 3), (2, 1)]);
    }
}
