use std::fs;
use std::path::Path;

use log::{info, warn};
use ovdbench::datamodel::predictions_to_canonical_json;
use ovdbench::datasettools::{class_distribution, leakage_violations, parse_ratios, split, temporal_clusters, SplitName};
use ovdbench::json::{float, to_canonical_string};
use ovdbench::postprocess::{postprocess_predictions, SuppressionConfig, SuppressionMode};
use ovdbench::protocols::{
    build_caption_groups, caption_groups_to_json, eval_3fovd, eval_fgovd, eval_ovvg, eval_supervised,
    grounding_to_json, parse_caption_groups, parse_grounding, ProtocolConfig, DEFAULT_GROUNDING_IOU,
    DEFAULT_NMS_IOU,
};
use ovdbench::synth::{
    generate_dataset, mock_caption_scores, mock_detect_all, mock_grounding, MockDetectorConfig, SceneSpec, VideoSpec,
};
use ovdbench::{load_dataset, load_predictions, Dataset};
use serde_json::{json, Value};

use crate::args::{
    Command, EvaluateArgs, PostprocessArgs, ProtocolName, SplitArgs, StatsArgs, SuppressionArgs, SynthArgs,
    ValidateArgs,
};
use crate::error::CliError;
use crate::manifest::RunManifest;

pub fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Evaluate(a) => evaluate(a),
        Command::Postprocess(a) => postprocess(a),
        Command::Split(a) => split_cmd(a),
        Command::Stats(a) => stats(a),
        Command::Synth(a) => synth(a),
        Command::Validate(a) => validate(a),
    }
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|source| ovdbench::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        ovdbench::Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        }
        .into()
    })
}

fn write(out: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = out.join(name);
    fs::create_dir_all(out)
        .and_then(|_| fs::write(&path, contents))
        .map_err(|source| CliError::Output { path, source })?;
    info!("wrote {}", out.join(name).display());
    Ok(())
}

/// Writes a JSON object with the manifest under the `manifest` key.
fn write_with_manifest(out: &Path, name: &str, mut value: Value, manifest: &RunManifest) -> Result<(), CliError> {
    if let Value::Object(m) = &mut value {
        m.insert("manifest".into(), manifest.to_value());
    }
    write(out, name, &to_canonical_string(&value))
}

/// Writes a file whose format has no room for a manifest, plus a
/// `<stem>.manifest.json` sidecar.
fn write_with_sidecar(out: &Path, name: &str, contents: &str, manifest: &RunManifest) -> Result<(), CliError> {
    write(out, name, contents)?;
    let stem = name.rsplit_once('.').map_or(name, |(s, _)| s);
    write(out, &format!("{stem}.manifest.json"), &to_canonical_string(&manifest.to_value()))
}

fn parse_size(text: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("size {text:?} must have the form WxH"));
    let (w, h) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: f64 = w.trim().parse().map_err(|_| bad())?;
    let h: f64 = h.trim().parse().map_err(|_| bad())?;
    Ok((w, h))
}

fn suppression_config(s: &SuppressionArgs) -> Result<SuppressionConfig, CliError> {
    let mut cfg = match &s.preset {
        Some(name) => SuppressionConfig::preset(name.parse()?),
        None => SuppressionConfig::unbounded(0.8),
    };
    if let Some(t) = s.overlap_threshold {
        cfg.overlap_threshold = t;
    }
    if let Some(size) = &s.min_size {
        (cfg.min_width, cfg.min_height) = parse_size(size)?;
    }
    if let Some(size) = &s.max_size {
        (cfg.max_width, cfg.max_height) = parse_size(size)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn thresholds(iou: Option<f64>) -> Vec<f64> {
    iou.map_or_else(ovdbench::metrics::default_iou_thresholds, |t| vec![t])
}

fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let manifest = RunManifest::new("evaluate", a)
        .input("dataset", &a.dataset)?
        .input("predictions", &a.predictions)?;
    let ds: Dataset = load_dataset(&a.dataset)?;
    let source = a.predictions.display().to_string();

    let (value, text) = match a.protocol {
        ProtocolName::Supervised => {
            let preds = load_predictions(&a.predictions, &ds)?;
            let cfg = ProtocolConfig::Supervised {
                iou_thresholds: thresholds(a.iou),
                nms_iou_threshold: DEFAULT_NMS_IOU,
            };
            let r = eval_supervised(&ds, &preds, &cfg)?;
            (r.to_json_value(), r.to_text_table())
        }
        ProtocolName::ThreeFOvd => {
            let preds = load_predictions(&a.predictions, &ds)?;
            let suppression = a.suppression.is_set().then(|| suppression_config(&a.suppression)).transpose()?;
            let cfg = ProtocolConfig::ThreeFOvd {
                iou_thresholds: thresholds(a.iou),
                suppression,
                strict_tokens: a.strict_tokens,
            };
            let r = eval_3fovd(&ds, &preds, &cfg)?;
            (r.to_json_value(), r.to_text_table())
        }
        ProtocolName::Fgovd => {
            let (groups, scores) = parse_caption_groups(&source, &read_json(&a.predictions)?, &ds)?;
            let k = a
                .negatives
                .unwrap_or_else(|| groups.first().map_or(1, |g| g.negatives.len()));
            let n = a
                .vocabularies
                .unwrap_or_else(|| groups.iter().map(|g| g.vocabulary + 1).max().unwrap_or(1));
            let cfg = ProtocolConfig::FgOvd {
                iou_thresholds: thresholds(a.iou),
                negatives_per_positive: k,
                vocabularies: n,
            };
            let r = eval_fgovd(&ds, &groups, &scores, &cfg)?;
            (r.to_json_value(), r.to_text_table())
        }
        ProtocolName::Ovvg => {
            let (queries, answers) = parse_grounding(&source, &read_json(&a.predictions)?, &ds)?;
            let r = eval_ovvg(&queries, &answers, a.iou.unwrap_or(DEFAULT_GROUNDING_IOU))?;
            (r.to_json_value(), r.to_text_table())
        }
    };
    print!("{text}");
    write_with_manifest(&a.out, "report.json", value, &manifest)?;
    write(&a.out, "report.txt", &format!("{text}{}\n", manifest.to_line()))
}

fn postprocess(a: &PostprocessArgs) -> Result<(), CliError> {
    if !a.suppression.is_set() {
        return Err(CliError::Usage(
            "postprocess needs --preset or at least one of --overlap-threshold, --min-size, --max-size".into(),
        ));
    }
    let manifest = RunManifest::new("postprocess", a)
        .input("dataset", &a.dataset)?
        .input("predictions", &a.predictions)?;
    let ds: Dataset = load_dataset(&a.dataset)?;
    let preds = load_predictions(&a.predictions, &ds)?;
    let mut cfg = suppression_config(&a.suppression)?;
    if a.kept_only {
        cfg = cfg.with_mode(SuppressionMode::KeptOnly);
    }
    let outcome = postprocess_predictions(&preds, &cfg);
    println!("removed {} of {} boxes", outcome.removed, preds.len());
    write_with_sidecar(&a.out, "predictions.json", &predictions_to_canonical_json(&outcome.kept), &manifest)?;
    let aggregated = json!({
        "images": outcome.aggregated_json(),
        "removed": outcome.removed,
        "kept": outcome.kept.len(),
    });
    write_with_manifest(&a.out, "aggregated.json", aggregated, &manifest)
}

fn split_cmd(a: &SplitArgs) -> Result<(), CliError> {
    if !(a.gap.is_finite() && a.gap >= 0.0) {
        return Err(CliError::Usage(format!("--gap {} must be a non-negative number", a.gap)));
    }
    let manifest = RunManifest::new("split", a).input("dataset", &a.dataset)?.seed(a.seed);
    let ds: Dataset = load_dataset(&a.dataset)?;
    let ratios = parse_ratios(&a.ratios)?;
    let clusters = temporal_clusters(&ds.images, a.gap);
    let assignment = split(&clusters, ratios, a.seed)?;
    let violations = leakage_violations(&ds.images, &assignment, a.gap);
    if !violations.is_empty() {
        // clusters are built from the same rule, so this is a bug
        panic!("split leaked {} frame pairs across splits", violations.len());
    }

    println!("{} images in {} clusters", ds.images.len(), clusters.len());
    println!("split   images  achieved  target");
    let sizes = assignment.sizes();
    for (i, name) in SplitName::ALL.iter().enumerate() {
        println!(
            "{:<7} {:>6}  {:>8.4}  {:>6.4}",
            name.as_str(),
            sizes[i],
            assignment.achieved_ratios[i],
            ratios[i]
        );
    }
    println!("leakage check: passed (0 violations)");
    if !assignment.within_tolerance() {
        warn!(
            "achieved ratios deviate by {:.4} from the targets (tolerance 0.02)",
            assignment.max_ratio_error()
        );
    }

    let mut value = assignment.to_json_value(a.gap, a.seed);
    if let Value::Object(m) = &mut value {
        m.insert("target_ratios".into(), Value::Array(ratios.iter().map(|r| float(*r)).collect()));
        m.insert(
            "achieved_ratios".into(),
            Value::Array(assignment.achieved_ratios.iter().map(|r| float(*r)).collect()),
        );
        m.insert("leakage_violations".into(), json!(0));
        m.insert("cluster_count".into(), json!(assignment.cluster_count));
    }
    write_with_manifest(&a.out, "splits.json", value, &manifest)
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let manifest = RunManifest::new("stats", a).input("dataset", &a.dataset)?;
    let ds: Dataset = load_dataset(&a.dataset)?;
    let mut csv = String::from("class_id,name,novelty,images\n");
    for (class_id, images) in class_distribution(&ds) {
        let class = ds.class(class_id).expect("class from dataset");
        let novelty = serde_json::to_value(class.novelty).expect("novelty serializes");
        csv.push_str(&format!(
            "{class_id},{},{},{images}\n",
            csv_field(&class.name),
            novelty.as_str().unwrap_or_default()
        ));
    }
    print!("{csv}");
    write_with_sidecar(&a.out, "class_distribution.csv", &csv, &manifest)
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let manifest = RunManifest::new("synth", a).seed(a.seed);
    let spec = SceneSpec {
        images: a.images,
        classes: a.classes,
        video: a.video.then(|| VideoSpec {
            sequences: a.sequences,
            ..VideoSpec::default()
        }),
        ..SceneSpec::default()
    };
    let ds = generate_dataset(&spec, a.seed)?;
    let cfg = MockDetectorConfig {
        localization_jitter: a.jitter,
        miss_rate: a.miss_rate,
        component_fp_rate: a.component_rate,
        unk_rate: a.unk_rate,
        confusion_rate: a.confusion_rate,
        seed: a.seed,
        ..MockDetectorConfig::default()
    };
    let detections = mock_detect_all(&ds, &cfg)?;
    let groups = build_caption_groups(&ds, &spec.palette, a.negatives, a.vocabularies, a.seed)?;
    let caption_scores = mock_caption_scores(&ds, &groups, &cfg)?;
    let (queries, answers) = mock_grounding(&ds, &cfg)?;

    write(&a.out, "dataset.json", &ds.to_canonical_json(Some(("manifest", manifest.to_value()))))?;
    write_with_sidecar(
        &a.out,
        "predictions.json",
        &predictions_to_canonical_json(&detections.predictions),
        &manifest,
    )?;
    write_with_sidecar(
        &a.out,
        "caption_groups.json",
        &to_canonical_string(&caption_groups_to_json(&groups, &caption_scores)),
        &manifest,
    )?;
    write_with_sidecar(
        &a.out,
        "grounding.json",
        &to_canonical_string(&grounding_to_json(&queries, &answers)),
        &manifest,
    )?;
    let summary = json!({
        "images": ds.images.len(),
        "classes": ds.classes.len(),
        "objects": ds.ground_truth.len(),
        "predictions": detections.predictions.len(),
        "injected_components": detections.component_count(),
        "caption_groups": groups.len(),
        "grounding_queries": queries.len(),
    });
    println!(
        "{} images, {} objects, {} predictions ({} injected component boxes)",
        ds.images.len(),
        ds.ground_truth.len(),
        detections.predictions.len(),
        detections.component_count()
    );
    write_with_manifest(&a.out, "synth_summary.json", summary, &manifest)
}

fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let ds: Dataset = load_dataset(&a.dataset)?;
    println!(
        "{}: ok ({} images, {} classes, {} boxes)",
        a.dataset.display(),
        ds.images.len(),
        ds.classes.len(),
        ds.ground_truth.len()
    );
    if let Some(path) = &a.predictions {
        let preds = load_predictions(path, &ds)?;
        println!("{}: ok ({} predictions)", path.display(), preds.len());
    }
    Ok(())
}
