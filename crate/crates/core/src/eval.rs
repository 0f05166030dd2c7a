//! Size-stratified per-class average precision and mAP over detector output
//! files, following the VOC devkit matching rules: greedy match by descending
//! score, IoU threshold 0.5, difficult ground truth ignored.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::voc::{canonical_class, size_class, BoundingBox, ImageAnnotation, SizeClass};

/// One detector output box.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub class_name: String,
    pub score: f64,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApProtocol {
    /// VOC2007 11-point interpolation.
    ElevenPoint,
    /// Area under the monotonized precision-recall curve.
    AllPoints,
}

/// What to do with detections whose best match is ground truth outside the
/// size filter: ignore them (default, the detector is not punished for
/// finding objects of another size) or count them as false positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossSizeMode {
    Ignore,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub ap_protocol: ApProtocol,
    pub size_filter: Option<SizeClass>,
    pub cross_size_mode: CrossSizeMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            ap_protocol: ApProtocol::ElevenPoint,
            size_filter: None,
            cross_size_mode: CrossSizeMode::Ignore,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Validation(format!(
                "iou_threshold must be in (0,1], got {}",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Intersection over union under the inclusive +1 convention.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    Tp,
    Fp,
    Ignored,
}

#[derive(Debug, Clone, Copy)]
enum GtEligibility {
    Positive,
    Ignore,
}

struct GtEntry {
    bbox: BoundingBox,
    eligibility: GtEligibility,
    claimed: bool,
}

fn ground_truth_index(
    ground_truth: &[ImageAnnotation],
    class: &str,
    config: &EvalConfig,
) -> (HashMap<String, Vec<GtEntry>>, u64) {
    let mut index: HashMap<String, Vec<GtEntry>> = HashMap::new();
    let mut n_positive = 0u64;
    for ann in ground_truth {
        let mut entries = Vec::new();
        for obj in ann.objects.iter().filter(|o| o.class_name == class) {
            let in_filter = config
                .size_filter
                .map(|s| size_class(&obj.bbox) == s)
                .unwrap_or(true);
            let eligibility = if !in_filter {
                match config.cross_size_mode {
                    CrossSizeMode::Ignore => GtEligibility::Ignore,
                    // strict mode: out-of-size ground truth is simply absent,
                    // so a detection on it becomes a false positive
                    CrossSizeMode::Strict => continue,
                }
            } else if obj.difficult {
                GtEligibility::Ignore
            } else {
                n_positive += 1;
                GtEligibility::Positive
            };
            entries.push(GtEntry {
                bbox: obj.bbox,
                eligibility,
                claimed: false,
            });
        }
        if !entries.is_empty() {
            index.insert(ann.image_id.clone(), entries);
        }
    }
    (index, n_positive)
}

/// Greedy matching of one class's detections against ground truth.
///
/// Detections are sorted by descending score (stable, so ties keep input
/// order). Each detection is matched to the highest-IoU candidate with
/// IoU >= threshold among unclaimed positives and ignorable boxes; a match to
/// an ignorable box yields `Ignored`, a duplicate match yields `Fp`.
///
/// Returns the labels in sorted-detection order plus the positive count.
pub fn match_detections(
    detections: &[Detection],
    ground_truth: &[ImageAnnotation],
    class: &str,
    config: &EvalConfig,
) -> (Vec<MatchLabel>, u64) {
    let (mut index, n_positive) = ground_truth_index(ground_truth, class, config);

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut labels = Vec::with_capacity(detections.len());
    for &i in &order {
        let det = &detections[i];
        let label = match index.get_mut(&det.image_id) {
            None => MatchLabel::Fp,
            Some(entries) => {
                let mut best: Option<(usize, f64)> = None;
                let mut any_above = false;
                for (j, entry) in entries.iter().enumerate() {
                    let ov = iou(&det.bbox, &entry.bbox);
                    if ov < config.iou_threshold {
                        continue;
                    }
                    any_above = true;
                    let available =
                        matches!(entry.eligibility, GtEligibility::Ignore) || !entry.claimed;
                    if available && best.map(|(_, b)| ov > b).unwrap_or(true) {
                        best = Some((j, ov));
                    }
                }
                match best {
                    Some((j, _)) => match entries[j].eligibility {
                        GtEligibility::Ignore => MatchLabel::Ignored,
                        GtEligibility::Positive => {
                            entries[j].claimed = true;
                            MatchLabel::Tp
                        }
                    },
                    None if any_above => MatchLabel::Fp, // duplicate match
                    None => MatchLabel::Fp,
                }
            }
        };
        labels.push(label);
    }
    (labels, n_positive)
}

/// Average precision from a label sequence (already score-ordered).
/// Returns `None` when there are no positives: the class is excluded, not 0.
pub fn average_precision(
    labels: &[MatchLabel],
    n_positive: u64,
    protocol: ApProtocol,
) -> Option<f64> {
    if n_positive == 0 {
        return None;
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    for label in labels {
        match label {
            MatchLabel::Tp => tp += 1,
            MatchLabel::Fp => fp += 1,
            MatchLabel::Ignored => continue,
        }
        let recall = tp as f64 / n_positive as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        points.push((recall, precision));
    }
    let ap = match protocol {
        ApProtocol::ElevenPoint => {
            let mut sum = 0.0;
            for t in 0..=10 {
                let threshold = t as f64 / 10.0;
                let p = points
                    .iter()
                    .filter(|(r, _)| *r >= threshold - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                sum += p;
            }
            sum / 11.0
        }
        ApProtocol::AllPoints => {
            // monotonize precision from the right, then integrate over recall
            let mut env: Vec<(f64, f64)> = points.clone();
            let mut running = 0.0f64;
            for point in env.iter_mut().rev() {
                running = running.max(point.1);
                point.1 = running;
            }
            let mut area = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in env {
                if r > prev_recall {
                    area += (r - prev_recall) * p;
                    prev_recall = r;
                }
            }
            area
        }
    };
    Some(ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    pub ap_percent: f64,
    pub n_ground_truth: u64,
}

/// Per-class APs, aggregate mAP, and the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: BTreeMap<String, ClassResult>,
    /// Classes with zero eligible ground truth, excluded from the mean.
    pub excluded_classes: Vec<String>,
    pub map_percent: f64,
    pub config: EvalConfig,
}

impl EvalReport {
    /// CSV: `class,ap_percent,n_gt` plus an `mAP` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,ap_percent,n_gt\n");
        for (class, r) in &self.per_class {
            let _ = writeln!(out, "{class},{:.4},{}", r.ap_percent, r.n_ground_truth);
        }
        let _ = writeln!(out, "mAP,{:.4},", self.map_percent);
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| class | AP (%) | ground truth |\n|---|---|---|\n");
        for (class, r) in &self.per_class {
            let _ = writeln!(
                out,
                "| {class} | {:.2} | {} |",
                r.ap_percent, r.n_ground_truth
            );
        }
        let _ = writeln!(out, "| **mAP** | **{:.2}** | |", self.map_percent);
        if !self.excluded_classes.is_empty() {
            let _ = writeln!(
                out,
                "\nexcluded (no eligible ground truth): {}",
                self.excluded_classes.join(", ")
            );
        }
        out
    }
}

/// Full evaluation: per-class AP and mAP under the configured size filter.
pub fn evaluate(
    detections: &BTreeMap<String, Vec<Detection>>,
    ground_truth: &[ImageAnnotation],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let known_ids: std::collections::HashSet<&str> =
        ground_truth.iter().map(|a| a.image_id.as_str()).collect();
    for dets in detections.values() {
        for det in dets {
            if !known_ids.contains(det.image_id.as_str()) {
                return Err(Error::Validation(format!(
                    "detection references unknown image_id `{}`",
                    det.image_id
                )));
            }
        }
    }

    // evaluate every class that appears in ground truth or detections
    let mut classes: Vec<String> = detections.keys().cloned().collect();
    for ann in ground_truth {
        for obj in &ann.objects {
            if !classes.contains(&obj.class_name) {
                classes.push(obj.class_name.clone());
            }
        }
    }
    classes.sort();
    classes.dedup();

    let empty: Vec<Detection> = Vec::new();
    let mut per_class = BTreeMap::new();
    let mut excluded = Vec::new();
    for class in classes {
        let dets = detections.get(&class).unwrap_or(&empty);
        let (labels, n_positive) = match_detections(dets, ground_truth, &class, config);
        match average_precision(&labels, n_positive, config.ap_protocol) {
            Some(ap) => {
                per_class.insert(
                    class,
                    ClassResult {
                        ap_percent: ap * 100.0,
                        n_ground_truth: n_positive,
                    },
                );
            }
            None => excluded.push(class),
        }
    }
    let map_percent = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|r| r.ap_percent).sum::<f64>() / per_class.len() as f64
    };
    Ok(EvalReport {
        per_class,
        excluded_classes: excluded,
        map_percent,
        config: *config,
    })
}

/// Parses one VOC comp-style detection file: lines of
/// `image_id score xmin ymin xmax ymax` with 1-based inclusive coordinates.
/// `#` starts a comment.
pub fn parse_detection_file(text: &str, class: &str) -> Result<Vec<Detection>> {
    let class = canonical_class(class)?;
    let mut detections = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Validation(format!(
                "detection line {}: expected 6 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let score: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Validation(format!("detection line {}: bad score", lineno + 1)))?;
        if !score.is_finite() {
            return Err(Error::Validation(format!(
                "detection line {}: non-finite score",
                lineno + 1
            )));
        }
        let coord = |s: &str| -> Result<i64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(|v| v.round() as i64)
                .ok_or_else(|| {
                    Error::Validation(format!("detection line {}: bad coordinate", lineno + 1))
                })
        };
        let bbox = BoundingBox::new(
            (coord(fields[2])? - 1).max(0),
            (coord(fields[3])? - 1).max(0),
            (coord(fields[4])? - 1).max(0),
            (coord(fields[5])? - 1).max(0),
        )?;
        detections.push(Detection {
            image_id: fields[0].to_string(),
            class_name: class.to_string(),
            score,
            bbox,
        });
    }
    Ok(detections)
}

/// Loads every `.txt` file in a directory as one class's detections. The
/// class is the file stem, or its last `_`-separated token for devkit-style
/// `comp3_det_test_car.txt` names.
pub fn load_detection_dir(dir: &Path) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut out = BTreeMap::new();
    let mut paths: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "txt").unwrap_or(false))
        .collect();
    paths.sort();
    for path in paths {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let class = canonical_class(&stem)
            .or_else(|_| canonical_class(stem.rsplit('_').next().unwrap_or(&stem)))?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let dets = parse_detection_file(&text, class)?;
        out.entry(class.to_string())
            .or_insert_with(Vec::new)
            .extend(dets);
    }
    Ok(out)
}
