//! Synthetic scenes and a mock open-vocabulary detector.
//!
//! The mock detector reproduces what real caption-driven detectors do on
//! fine-grained classes: the class name is often an out-of-vocabulary
//! `[UNK]` token, individual caption words ("text", "logo", "wheel") fire on
//! small parts inside the object, and the same class-agnostic proposal box
//! shows up under many captions. Everything is a pure function of the
//! inputs and seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::datamodel::{tokenize, ClassEntry, Dataset, GroundTruth, ImageRecord, Novelty, Prediction, UNK_TOKEN};
use crate::embedcache::{score_alignment, Embedder, Embedding, EmbeddingCache};
use crate::error::{Error, Result};
use crate::geometry::{area, overlap_ratio, BBox};
use crate::protocols::{CaptionDetection, CaptionGroup, CaptionScores, GroundingQuery};

/// Timestamped frame sequences for split experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSpec {
    pub sequences: usize,
    pub frames_per_sequence: (usize, usize),
    /// Seconds between consecutive frames, drawn uniformly.
    pub frame_interval: (f64, f64),
}

impl Default for VideoSpec {
    fn default() -> Self {
        Self {
            sequences: 40,
            frames_per_sequence: (5, 30),
            frame_interval: (0.5, 9.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub objects_per_image: (usize, usize),
    pub classes: usize,
    /// Side length range of object boxes, in pixels.
    pub object_size: (f64, f64),
    /// Placement rejects pairs whose overlap ratio (either direction)
    /// exceeds this.
    pub max_pairwise_overlap: f64,
    pub base_fraction: f64,
    pub component_words: Vec<String>,
    pub palette: Vec<String>,
    /// When set, images become frames of timestamped sequences and the
    /// image count is taken from the sequences.
    pub video: Option<VideoSpec>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            images: 50,
            width: 1920,
            height: 1080,
            objects_per_image: (1, 6),
            classes: 10,
            object_size: (240.0, 600.0),
            max_pairwise_overlap: 0.5,
            base_fraction: 0.7,
            component_words: default_component_words(),
            palette: default_palette(),
            video: None,
        }
    }
}

pub fn default_component_words() -> Vec<String> {
    ["text", "logo", "wheel"].map(String::from).to_vec()
}

pub fn default_palette() -> Vec<String> {
    ["green", "red", "blue", "yellow", "white", "black"]
        .map(String::from)
        .to_vec()
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.objects_per_image;
        let (smin, smax) = self.object_size;
        let ok = self.classes > 0
            && self.width > 0
            && self.height > 0
            && lo <= hi
            && smin > 0.0
            && smin <= smax
            && smax <= f64::from(self.width.min(self.height))
            && (0.0..=1.0).contains(&self.base_fraction)
            && !self.palette.is_empty()
            && (self.video.is_some() || self.images > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid scene spec {self:?}")))
        }
    }
}

/// Class name token used in captions and emitted for object-level boxes.
pub fn class_name(index: usize) -> String {
    format!("Product{index:03}")
}

fn caption_for(name: &str, color: &str, shape: &str, components: &[String]) -> String {
    let mut caption = format!("The packaging of {name} is a {color} {shape} plastic bag");
    if !components.is_empty() {
        caption.push_str(" showing a ");
        caption.push_str(&components.join(" and a "));
    }
    caption
}

/// Area of `target` left uncovered by the union of `occluders`.
pub fn visible_area(target: &BBox, occluders: &[BBox]) -> f64 {
    let clipped: Vec<BBox> = occluders
        .iter()
        .filter_map(|o| target.intersection(o))
        .filter(|b| area(b) > 0.0)
        .collect();
    if clipped.is_empty() {
        return area(target);
    }
    let mut xs: Vec<f64> = clipped.iter().flat_map(|b| [b.x_min, b.x_max]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut covered = 0.0;
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let mut spans: Vec<(f64, f64)> = clipped
            .iter()
            .filter(|b| b.x_min <= x0 && b.x_max >= x1)
            .map(|b| (b.y_min, b.y_max))
            .collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut len = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (s, e) in spans {
            match cur {
                Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    len += ce - cs;
                    cur = Some((s, e));
                }
                None => cur = Some((s, e)),
            }
        }
        if let Some((cs, ce)) = cur {
            len += ce - cs;
        }
        covered += len * (x1 - x0);
    }
    (area(target) - covered).max(0.0)
}

/// Object placed in a scene, stacked in generation order (later on top).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedObject {
    pub bbox: BBox,
    pub class_id: u64,
}

/// Ground truth for one image: objects with less than a third of their area
/// visible under later objects are not annotated.
pub fn annotate_visible(image_id: u64, objects: &[PlacedObject]) -> Vec<GroundTruth> {
    objects
        .iter()
        .enumerate()
        .filter(|(i, o)| {
            let above: Vec<BBox> = objects[i + 1..].iter().map(|a| a.bbox).collect();
            visible_area(&o.bbox, &above) * 3.0 >= area(&o.bbox)
        })
        .map(|(_, o)| GroundTruth {
            image_id,
            bbox: o.bbox,
            class_id: o.class_id,
        })
        .collect()
}

fn video_frames(video: &VideoSpec, rng: &mut ChaCha8Rng, width: u32, height: u32) -> Vec<ImageRecord> {
    let mut frames = Vec::new();
    let mut id = 1u64;
    for seq in 0..video.sequences {
        let n = rng.random_range(video.frames_per_sequence.0..=video.frames_per_sequence.1);
        let mut t = 0.0;
        for _ in 0..n {
            frames.push(ImageRecord {
                id,
                width,
                height,
                timestamp: Some(t),
                sequence_id: Some(seq as u64 + 1),
            });
            id += 1;
            t += rng.random_range(video.frame_interval.0..=video.frame_interval.1);
        }
    }
    frames
}

/// Deterministic scene corpus: classes with one caption each, objects
/// placed without heavy pairwise overlap, occluded objects left unannotated.
pub fn generate_dataset(spec: &SceneSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = ["plum-shaped", "round", "square", "tall"];
    let n_base = (spec.base_fraction * spec.classes as f64).round() as usize;
    let classes: Vec<ClassEntry> = (0..spec.classes)
        .map(|i| {
            let name = class_name(i + 1);
            let color = &spec.palette[rng.random_range(0..spec.palette.len())];
            let shape = shapes[rng.random_range(0..shapes.len())];
            ClassEntry {
                id: i as u64 + 1,
                caption: caption_for(&name, color, shape, &spec.component_words),
                name,
                coarse_class_id: (i % 3) as u64 + 1,
                novelty: if i < n_base { Novelty::Base } else { Novelty::Novel },
            }
        })
        .collect();

    let images = match &spec.video {
        Some(video) => video_frames(video, &mut rng, spec.width, spec.height),
        None => (1..=spec.images as u64)
            .map(|id| ImageRecord {
                id,
                width: spec.width,
                height: spec.height,
                timestamp: None,
                sequence_id: None,
            })
            .collect(),
    };

    let (w_img, h_img) = (f64::from(spec.width), f64::from(spec.height));
    let mut ground_truth = Vec::new();
    for img in &images {
        let n = rng.random_range(spec.objects_per_image.0..=spec.objects_per_image.1);
        let mut placed: Vec<PlacedObject> = Vec::new();
        for _ in 0..n {
            for _attempt in 0..50 {
                let w = rng.random_range(spec.object_size.0..=spec.object_size.1).round();
                let h = rng.random_range(spec.object_size.0..=spec.object_size.1).round();
                let x = rng.random_range(0.0..=(w_img - w)).round();
                let y = rng.random_range(0.0..=(h_img - h)).round();
                let candidate = BBox::new(x, y, x + w, y + h);
                let clear = placed.iter().all(|o| {
                    overlap_ratio(&candidate, &o.bbox) <= spec.max_pairwise_overlap
                        && overlap_ratio(&o.bbox, &candidate) <= spec.max_pairwise_overlap
                });
                if clear {
                    placed.push(PlacedObject {
                        bbox: candidate,
                        class_id: rng.random_range(1..=spec.classes as u64),
                    });
                    break;
                }
            }
        }
        ground_truth.extend(annotate_visible(img.id, &placed));
    }
    Dataset::from_parts(images, classes, ground_truth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockDetectorConfig {
    /// Half-width of the uniform noise added to each proposal corner.
    pub localization_jitter: f64,
    pub tp_score_range: (f64, f64),
    pub miss_rate: f64,
    /// Mean number of part boxes per detected object.
    pub component_fp_rate: f64,
    pub component_words: Vec<String>,
    pub component_score_range: (f64, f64),
    /// Clamp each part's score strictly below its parent's.
    pub component_below_parent: bool,
    pub unk_rate: f64,
    /// Probability that a caption also fires on an object of another class.
    pub confusion_rate: f64,
    pub confusion_score_range: (f64, f64),
    pub seed: u64,
}

impl Default for MockDetectorConfig {
    fn default() -> Self {
        Self {
            localization_jitter: 4.0,
            tp_score_range: (0.6, 1.0),
            miss_rate: 0.0,
            component_fp_rate: 2.0,
            component_words: default_component_words(),
            component_score_range: (0.1, 0.4),
            component_below_parent: true,
            unk_rate: 0.0,
            confusion_rate: 0.0,
            confusion_score_range: (0.05, 0.3),
            seed: 0,
        }
    }
}

impl MockDetectorConfig {
    /// Detector that returns exactly the ground truth of the queried class.
    pub fn noiseless(seed: u64) -> Self {
        Self {
            localization_jitter: 0.0,
            tp_score_range: (1.0, 1.0),
            component_fp_rate: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let range = |(lo, hi): (f64, f64)| lo <= hi && lo >= 0.0 && hi <= 1.0;
        let ok = self.localization_jitter >= 0.0
            && self.component_fp_rate >= 0.0
            && prob(self.miss_rate)
            && prob(self.unk_rate)
            && prob(self.confusion_rate)
            && range(self.tp_score_range)
            && range(self.component_score_range)
            && range(self.confusion_score_range)
            && (self.component_fp_rate == 0.0 || !self.component_words.is_empty());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid mock detector config {self:?}")))
        }
    }
}

/// Where a mock prediction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Detection of the queried class's object `gt_index`.
    Object { gt_index: usize },
    /// Part box nested in the prediction at index `parent`.
    Component { parent: usize },
    /// The queried caption firing on another class's object.
    Confusion { gt_index: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MockDetections {
    pub predictions: Vec<Prediction>,
    pub provenance: Vec<Provenance>,
}

impl MockDetections {
    pub fn component_count(&self) -> usize {
        self.provenance
            .iter()
            .filter(|p| matches!(p, Provenance::Component { .. }))
            .count()
    }

    fn append(&mut self, other: MockDetections) {
        let offset = self.predictions.len();
        self.predictions.extend(other.predictions);
        self.provenance.extend(other.provenance.into_iter().map(|p| match p {
            Provenance::Component { parent } => Provenance::Component {
                parent: parent + offset,
            },
            other => other,
        }));
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Class-agnostic proposal for object `gt_index`: the same box under every
/// caption, jittered once per object.
fn proposal_box(ds: &Dataset, gt_index: usize, cfg: &MockDetectorConfig) -> BBox {
    let gt = &ds.ground_truth[gt_index];
    if cfg.localization_jitter == 0.0 {
        return gt.bbox;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, gt_index as u64 + 1));
    let j = cfg.localization_jitter;
    let mut d = || rng.random_range(-j..=j);
    let b = BBox::new(
        gt.bbox.x_min + d(),
        gt.bbox.y_min + d(),
        gt.bbox.x_max + d(),
        gt.bbox.y_max + d(),
    );
    let img = ds.image(gt.image_id).expect("validated reference");
    let b = b.clamp_to(f64::from(img.width), f64::from(img.height));
    if b.is_valid() && area(&b) > 0.0 {
        b
    } else {
        gt.bbox
    }
}

/// Runs the mock detector with the caption of `class_id` on every image.
pub fn mock_detect(ds: &Dataset, class_id: u64, cfg: &MockDetectorConfig) -> Result<Vec<Prediction>> {
    Ok(mock_detect_traced(ds, class_id, cfg)?.predictions)
}

pub fn mock_detect_traced(ds: &Dataset, class_id: u64, cfg: &MockDetectorConfig) -> Result<MockDetections> {
    cfg.validate()?;
    let class = ds
        .class(class_id)
        .ok_or_else(|| Error::InvalidConfig(format!("class {class_id} does not exist")))?;
    let name_token = tokenize(&class.name).join(" ");
    let caption_tokens = tokenize(&class.caption);
    let other_tokens: Vec<&String> = caption_tokens.iter().filter(|t| **t != name_token).collect();
    let poisson = (cfg.component_fp_rate > 0.0)
        .then(|| Poisson::new(cfg.component_fp_rate).expect("positive rate"));

    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0xC0FF_EE00, class_id));
    let mut out = MockDetections::default();
    for (g, gt) in ds.ground_truth.iter().enumerate() {
        if gt.class_id != class_id {
            if cfg.confusion_rate > 0.0 && rng.random_bool(cfg.confusion_rate) {
                let token = if other_tokens.is_empty() {
                    name_token.clone()
                } else {
                    other_tokens[rng.random_range(0..other_tokens.len())].clone()
                };
                out.predictions.push(Prediction {
                    image_id: gt.image_id,
                    bbox: proposal_box(ds, g, cfg),
                    score: uniform(&mut rng, cfg.confusion_score_range),
                    token,
                    caption_class_id: class_id,
                });
                out.provenance.push(Provenance::Confusion { gt_index: g });
            }
            continue;
        }
        if cfg.miss_rate > 0.0 && rng.random_bool(cfg.miss_rate) {
            continue;
        }
        let parent_box = proposal_box(ds, g, cfg);
        let parent_score = uniform(&mut rng, cfg.tp_score_range);
        let token = if cfg.unk_rate > 0.0 && rng.random_bool(cfg.unk_rate) {
            UNK_TOKEN.to_string()
        } else {
            name_token.clone()
        };
        let parent = out.predictions.len();
        out.predictions.push(Prediction {
            image_id: gt.image_id,
            bbox: parent_box,
            score: parent_score,
            token,
            caption_class_id: class_id,
        });
        out.provenance.push(Provenance::Object { gt_index: g });

        let n_parts = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_parts {
            // each side at most 0.45 of the parent's, so area < 1/4 of it
            let fw = rng.random_range(0.1..0.45);
            let fh = rng.random_range(0.1..0.45);
            let (pw, ph) = (parent_box.width(), parent_box.height());
            let (w, h) = (pw * fw, ph * fh);
            let x = parent_box.x_min + rng.random_range(0.0..=(pw - w));
            let y = parent_box.y_min + rng.random_range(0.0..=(ph - h));
            let mut score = uniform(&mut rng, cfg.component_score_range);
            if cfg.component_below_parent && score >= parent_score {
                score = parent_score * rng.random_range(0.5..1.0);
            }
            let word = &cfg.component_words[rng.random_range(0..cfg.component_words.len())];
            out.predictions.push(Prediction {
                image_id: gt.image_id,
                bbox: BBox::new(x, y, x + w, y + h),
                score,
                token: word.clone(),
                caption_class_id: class_id,
            });
            out.provenance.push(Provenance::Component { parent });
        }
    }
    Ok(out)
}

/// Runs every class caption, in ascending class id order.
pub fn mock_detect_all(ds: &Dataset, cfg: &MockDetectorConfig) -> Result<MockDetections> {
    let mut all = MockDetections::default();
    for class_id in ds.class_ids() {
        all.append(mock_detect_traced(ds, class_id, cfg)?);
    }
    Ok(all)
}

/// Mock scores for caption groups: each group is answered with the object's
/// proposal box, the positive scored in `tp_score_range` and each negative
/// in `confusion_score_range`, except that with probability
/// `confusion_rate` a negative is scored like a positive.
pub fn mock_caption_scores(ds: &Dataset, groups: &[CaptionGroup], cfg: &MockDetectorConfig) -> Result<CaptionScores> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0xF6_0BD0, groups.len() as u64));
    let mut scores = CaptionScores::new();
    for (i, g) in groups.iter().enumerate() {
        let gt_index = *ds
            .gts_of_image(g.image_id)
            .get(g.gt_index)
            .ok_or_else(|| Error::InvalidConfig(format!("caption group {i} references a missing object")))?;
        if cfg.miss_rate > 0.0 && rng.random_bool(cfg.miss_rate) {
            continue;
        }
        let bbox = proposal_box(ds, gt_index, cfg);
        scores.insert((i, 0), CaptionDetection { bbox, score: uniform(&mut rng, cfg.tp_score_range) });
        for c in 1..g.caption_count() {
            let range = if cfg.confusion_rate > 0.0 && rng.random_bool(cfg.confusion_rate) {
                cfg.tp_score_range
            } else {
                cfg.confusion_score_range
            };
            scores.insert((i, c), CaptionDetection { bbox, score: uniform(&mut rng, range) });
        }
    }
    Ok(scores)
}

/// One grounding query per annotated object, phrased with its class
/// caption and answered with the object's proposal box.
pub fn mock_grounding(ds: &Dataset, cfg: &MockDetectorConfig) -> Result<(Vec<GroundingQuery>, Vec<Vec<BBox>>)> {
    cfg.validate()?;
    let mut queries = Vec::with_capacity(ds.ground_truth.len());
    let mut answers = Vec::with_capacity(ds.ground_truth.len());
    for (g, gt) in ds.ground_truth.iter().enumerate() {
        let caption = ds.class(gt.class_id).map_or_else(String::new, |c| c.caption.clone());
        queries.push(GroundingQuery { image_id: gt.image_id, caption, gt_box: gt.bbox });
        answers.push(vec![proposal_box(ds, g, cfg)]);
    }
    Ok((queries, answers))
}

/// Visual feature of a ground-truth object: the scene model renders an
/// object as the embedding of its class description.
pub fn scene_feature(ds: &Dataset, gt: &GroundTruth, embedder: &dyn Embedder) -> Embedding {
    let caption = ds.class(gt.class_id).map_or("", |c| c.caption.as_str());
    embedder.embed(caption)
}

/// Caption-conditioned detection by embedding alignment.
///
/// Every image is scored against every class caption; caption embeddings
/// come from `cache`, so with the cache enabled each caption is encoded
/// once and with it disabled once per (image, caption) pair. Boxes whose
/// cosine score reaches `min_score` are emitted.
pub fn embedding_detect(
    ds: &Dataset,
    cache: &EmbeddingCache,
    embedder: &dyn Embedder,
    min_score: f64,
) -> Result<Vec<Prediction>> {
    let features: Vec<Embedding> = ds
        .ground_truth
        .iter()
        .map(|gt| scene_feature(ds, gt, embedder))
        .collect();
    let mut classes: Vec<&ClassEntry> = ds.classes.iter().collect();
    classes.sort_by_key(|c| c.id);
    let mut preds = Vec::new();
    for img in &ds.images {
        let objects = ds.gts_of_image(img.id);
        for class in &classes {
            let text = cache.get_or_compute(&class.caption, embedder);
            let token = tokenize(&class.name).join(" ");
            for &g in &objects {
                let score = score_alignment(&features[g], &text, cache.cost())?;
                if score >= min_score {
                    preds.push(Prediction {
                        image_id: img.id,
                        bbox: ds.ground_truth[g].bbox,
                        score: score.max(0.0),
                        token: token.clone(),
                        caption_class_id: class.id,
                    });
                }
            }
        }
    }
    Ok(preds)
}
