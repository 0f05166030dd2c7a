//! Copy-paste oversampling of small objects.
//!
//! Five canonical strategies: paste the original object, paste random
//! same-class pool objects, the same with random class switching, and two
//! variants mixing externally generated patches with VOC crops. Pasted
//! objects are placed at random positions that overlap neither the existing
//! objects nor the image boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::patch::{crop_object, ObjectPool, Patch};
use crate::rng::{self, Rng};
use crate::voc::{
    canonical_class, write_annotation, AnnotatedObject, BoundingBox, ImageAnnotation, SizeClass,
    VOC_CLASSES,
};

/// Classes whose patches come from the generated pool in the mixed source.
pub const GENERATED_CLASSES: [&str; 9] = [
    "aeroplane",
    "bird",
    "boat",
    "car",
    "chair",
    "horse",
    "person",
    "pottedplant",
    "tvmonitor",
];

/// Classes that fall back to VOC crops in the mixed source.
pub const VOC_FALLBACK_CLASSES: [&str; 6] =
    ["bicycle", "bottle", "bus", "cow", "motorbike", "sheep"];

/// Classes never chosen as a switch target (too few train and test samples).
pub const SWITCH_EXCLUDED_CLASSES: [&str; 4] = ["sofa", "dog", "diningtable", "cat"];

/// Classes oversampled with extra repetitions in strategy 5.
pub const LOW_COUNT_CLASSES: [&str; 6] =
    ["aeroplane", "train", "bicycle", "horse", "motorbike", "bus"];

/// Where replacement patches come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchSourceKind {
    /// Re-paste a crop of the original object itself.
    OriginalObject,
    /// Random same-class (or switched-class) VOC crop.
    VocPool,
    /// Generated pool for the nine generated classes, VOC pool otherwise.
    MixedGeneratedVoc,
}

/// Per-class repetition counts: a default plus per-class overrides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repetitions {
    pub default: u32,
    pub overrides: BTreeMap<String, u32>,
}

impl Repetitions {
    pub fn uniform(n: u32) -> Self {
        Repetitions {
            default: n,
            overrides: BTreeMap::new(),
        }
    }

    pub fn for_class(&self, class: &str) -> u32 {
        self.overrides.get(class).copied().unwrap_or(self.default)
    }
}

/// Declarative description of one oversampling strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyConfig {
    pub name: String,
    pub oversampling_ratio: u32,
    pub repetitions: Repetitions,
    pub patch_source: PatchSourceKind,
    pub class_switch: bool,
    pub switch_target_classes: BTreeSet<String>,
    pub rescale: bool,
}

fn default_switch_targets() -> BTreeSet<String> {
    VOC_CLASSES
        .iter()
        .filter(|c| !SWITCH_EXCLUDED_CLASSES.contains(c))
        .map(|c| c.to_string())
        .collect()
}

impl StrategyConfig {
    /// The five canonical presets.
    pub fn preset(id: u32) -> Result<StrategyConfig> {
        let base = StrategyConfig {
            name: format!("strategy{id}"),
            oversampling_ratio: 3,
            repetitions: Repetitions::uniform(5),
            patch_source: PatchSourceKind::VocPool,
            class_switch: false,
            switch_target_classes: default_switch_targets(),
            rescale: true,
        };
        let cfg = match id {
            1 => StrategyConfig {
                repetitions: Repetitions::uniform(1),
                patch_source: PatchSourceKind::OriginalObject,
                rescale: false,
                ..base
            },
            2 => base,
            3 => StrategyConfig {
                class_switch: true,
                ..base
            },
            4 => StrategyConfig {
                patch_source: PatchSourceKind::MixedGeneratedVoc,
                ..base
            },
            5 => StrategyConfig {
                patch_source: PatchSourceKind::MixedGeneratedVoc,
                class_switch: true,
                repetitions: Repetitions {
                    default: 10,
                    overrides: LOW_COUNT_CLASSES
                        .iter()
                        .map(|c| (c.to_string(), 15))
                        .collect(),
                },
                ..base
            },
            other => {
                return Err(Error::Validation(format!(
                    "unknown strategy id {other}, expected 1..=5"
                )))
            }
        };
        Ok(cfg)
    }

    /// Applies a flat key=value config text. Later lines win. Keys:
    /// `name`, `oversampling_ratio`, `repetitions`, `repetitions.<class>`,
    /// `patch_source` (original|voc|mixed), `class_switch`, `rescale`,
    /// `switch_target_classes` (comma-separated).
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Validation(format!("config line {}: expected key=value", lineno + 1))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Validation(format!("config key `{key}`: {what}"));
        let parse_pos = |v: &str| -> Result<u32> {
            v.parse::<u32>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| bad("expected a positive integer"))
        };
        let parse_bool = |v: &str| -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(bad("expected true/false")),
            }
        };
        match key {
            "name" => self.name = value.to_string(),
            "oversampling_ratio" => self.oversampling_ratio = parse_pos(value)?,
            "repetitions" => self.repetitions.default = parse_pos(value)?,
            "patch_source" => {
                self.patch_source = match value {
                    "original" => PatchSourceKind::OriginalObject,
                    "voc" => PatchSourceKind::VocPool,
                    "mixed" => PatchSourceKind::MixedGeneratedVoc,
                    _ => return Err(bad("expected original|voc|mixed")),
                }
            }
            "class_switch" => self.class_switch = parse_bool(value)?,
            "rescale" => self.rescale = parse_bool(value)?,
            "switch_target_classes" => {
                let mut set = BTreeSet::new();
                for part in value.split(',') {
                    set.insert(canonical_class(part)?.to_string());
                }
                self.switch_target_classes = set;
            }
            _ if key.starts_with("repetitions.") => {
                let class = canonical_class(&key["repetitions.".len()..])?;
                self.repetitions
                    .overrides
                    .insert(class.to_string(), parse_pos(value)?);
            }
            _ => return Err(bad("unknown key")),
        }
        Ok(())
    }

    fn switch_targets_ordered(&self) -> Vec<&str> {
        self.switch_target_classes
            .iter()
            .map(String::as_str)
            .collect()
    }
}

/// Placement rule: a pasted box must have zero intersection with every prior
/// box and lie fully inside the image; give up after `max_attempts` draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacementPolicy {
    pub max_attempts: u32,
}

impl Default for PlacementPolicy {
    fn default() -> Self {
        PlacementPolicy { max_attempts: 50 }
    }
}

/// One paste, for the provenance log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PasteRecord {
    pub patch_id: String,
    pub bbox: BoundingBox,
    pub original_class: String,
    pub final_class: String,
}

/// One augmented image: pixels, its pasted-objects-only annotation, and the
/// provenance of every paste.
#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub image: RgbImage,
    pub annotation: ImageAnnotation,
    pub provenance: Vec<PasteRecord>,
    pub failed_placements: u32,
}

/// Random rescale: each dimension is drawn independently and uniformly from
/// the inclusive range between its current value and 32 pixels.
pub fn rescale_patch(patch: &Patch, rng: &mut Rng) -> Patch {
    let (w, h) = (patch.width(), patch.height());
    let new_w = rng.gen_range(w.min(32)..=w.max(32));
    let new_h = rng.gen_range(h.min(32)..=h.max(32));
    if new_w == w && new_h == h {
        return patch.clone();
    }
    let pixels = image::imageops::resize(&patch.pixels, new_w, new_h, FilterType::Triangle);
    Patch {
        pixels,
        class_name: patch.class_name.clone(),
        source: patch.source,
        id: patch.id.clone(),
    }
}

/// Tries up to `policy.max_attempts` uniform top-left positions; the first
/// position whose box intersects nothing in `existing` wins and the patch is
/// overwritten into the image. Draw order per attempt: x, then y.
pub fn place_object(
    image: &mut RgbImage,
    existing: &[BoundingBox],
    patch: &Patch,
    policy: &PlacementPolicy,
    rng: &mut Rng,
) -> Result<Option<BoundingBox>> {
    let (iw, ih) = (image.width(), image.height());
    let (pw, ph) = (patch.width(), patch.height());
    if pw > iw || ph > ih {
        return Err(Error::Geometry(format!(
            "patch {pw}x{ph} larger than image {iw}x{ih}"
        )));
    }
    for _ in 0..policy.max_attempts {
        let x = rng.gen_range(0..=(iw - pw)) as i64;
        let y = rng.gen_range(0..=(ih - ph)) as i64;
        let bbox = BoundingBox::new(x, y, x + pw as i64 - 1, y + ph as i64 - 1)?;
        if existing.iter().any(|b| b.intersects(&bbox)) {
            continue;
        }
        image::imageops::overlay(image, &patch.pixels, x, y);
        return Ok(Some(bbox));
    }
    Ok(None)
}

/// How many augmented copies one image yields: the maximum repetition count
/// over its small objects' classes.
pub fn image_repetitions(annotation: &ImageAnnotation, strategy: &StrategyConfig) -> u32 {
    annotation
        .objects
        .iter()
        .filter(|o| o.size_class() == SizeClass::Small)
        .map(|o| strategy.repetitions.for_class(&o.class_name))
        .max()
        .unwrap_or(0)
}

/// Pools available to a strategy.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pools<'a> {
    pub voc: Option<&'a ObjectPool>,
    pub generated: Option<&'a ObjectPool>,
}

impl<'a> Pools<'a> {
    fn voc(&self) -> Result<&'a ObjectPool> {
        self.voc
            .ok_or_else(|| Error::Validation("strategy requires a VOC object pool".into()))
    }

    fn generated(&self) -> Result<&'a ObjectPool> {
        self.generated
            .ok_or_else(|| Error::Validation("strategy requires a generated object pool".into()))
    }
}

fn check_pool_coverage(
    annotation: &ImageAnnotation,
    strategy: &StrategyConfig,
    pools: &Pools,
) -> Result<()> {
    if strategy.patch_source == PatchSourceKind::OriginalObject && !strategy.class_switch {
        return Ok(());
    }
    let requestable: BTreeSet<&str> = if strategy.class_switch {
        strategy.switch_targets_ordered().into_iter().collect()
    } else {
        annotation
            .objects
            .iter()
            .filter(|o| o.size_class() == SizeClass::Small)
            .map(|o| o.class_name.as_str())
            .collect()
    };
    for class in requestable {
        let pool = match strategy.patch_source {
            PatchSourceKind::OriginalObject | PatchSourceKind::VocPool => pools.voc()?,
            PatchSourceKind::MixedGeneratedVoc => {
                if GENERATED_CLASSES.contains(&class) {
                    pools.generated()?
                } else {
                    pools.voc()?
                }
            }
        };
        if !pool.contains_class(class) {
            return Err(Error::PoolLookup {
                class: class.to_string(),
            });
        }
    }
    Ok(())
}

/// Runs one strategy on one image: `repetitions` independent samples, each
/// pasting `oversampling_ratio` patches per small object. RNG streams are
/// derived per repetition from (master_seed, image_id, repetition).
pub fn augment_image(
    image: &RgbImage,
    annotation: &ImageAnnotation,
    strategy: &StrategyConfig,
    pools: &Pools,
    policy: &PlacementPolicy,
    master_seed: u64,
) -> Result<Vec<AugmentedSample>> {
    let small: Vec<&AnnotatedObject> = annotation
        .objects
        .iter()
        .filter(|o| o.size_class() == SizeClass::Small)
        .collect();
    if small.is_empty() {
        return Ok(Vec::new());
    }
    check_pool_coverage(annotation, strategy, pools)?;

    let reps = image_repetitions(annotation, strategy);
    let mut samples = Vec::with_capacity(reps as usize);
    for rep in 0..reps {
        let mut rng = rng::derive_stream(master_seed, &annotation.image_id, rep);
        let mut canvas = image.clone();
        let mut existing: Vec<BoundingBox> = annotation.objects.iter().map(|o| o.bbox).collect();
        let mut pasted: Vec<AnnotatedObject> = Vec::new();
        let mut provenance = Vec::new();
        let mut failed = 0u32;

        for obj in &small {
            for _ in 0..strategy.oversampling_ratio {
                let final_class: String = if strategy.class_switch {
                    let targets = strategy.switch_targets_ordered();
                    targets[rng.gen_range(0..targets.len())].to_string()
                } else {
                    obj.class_name.clone()
                };
                let base = match strategy.patch_source {
                    PatchSourceKind::OriginalObject => crop_object(image, &obj.bbox, &final_class)?,
                    PatchSourceKind::VocPool => {
                        pools.voc()?.sample(&final_class, &mut rng)?.clone()
                    }
                    PatchSourceKind::MixedGeneratedVoc => {
                        if GENERATED_CLASSES.contains(&final_class.as_str()) {
                            pools.generated()?.sample(&final_class, &mut rng)?.clone()
                        } else {
                            pools.voc()?.sample(&final_class, &mut rng)?.clone()
                        }
                    }
                };
                let patch = if strategy.rescale {
                    rescale_patch(&base, &mut rng)
                } else {
                    base
                };
                if patch.width() > canvas.width() || patch.height() > canvas.height() {
                    failed += 1;
                    continue;
                }
                match place_object(&mut canvas, &existing, &patch, policy, &mut rng)? {
                    Some(bbox) => {
                        existing.push(bbox);
                        pasted.push(AnnotatedObject {
                            class_name: final_class.clone(),
                            bbox,
                            difficult: false,
                            truncated: false,
                            synthetic: true,
                        });
                        provenance.push(PasteRecord {
                            patch_id: patch.id.clone(),
                            bbox,
                            original_class: obj.class_name.clone(),
                            final_class,
                        });
                    }
                    None => failed += 1,
                }
            }
        }

        let out_ann = ImageAnnotation {
            image_id: format!("{}_aug{}", annotation.image_id, rep),
            width: annotation.width,
            height: annotation.height,
            depth: annotation.depth,
            objects: pasted,
        };
        samples.push(AugmentedSample {
            image: canvas,
            annotation: out_ann,
            provenance,
            failed_placements: failed,
        });
    }
    Ok(samples)
}

/// Per-class paste tally for a whole run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    /// class -> (pasted_count, failed_count)
    pub per_class: BTreeMap<String, (u64, u64)>,
    /// Images skipped because their annotation could not be honored.
    pub skipped: Vec<(String, String)>,
    pub samples_written: u64,
}

impl Manifest {
    pub fn total_pasted(&self) -> u64 {
        self.per_class.values().map(|(p, _)| p).sum()
    }

    pub fn total_failed(&self) -> u64 {
        self.per_class.values().map(|(_, f)| f).sum()
    }

    fn absorb(&mut self, sample: &AugmentedSample) {
        for rec in &sample.provenance {
            self.per_class.entry(rec.final_class.clone()).or_default().0 += 1;
        }
        self.samples_written += 1;
    }

    /// CSV: `class,pasted_count,failed_count` plus a totals row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,pasted_count,failed_count\n");
        for (class, (pasted, failed)) in &self.per_class {
            let _ = writeln!(out, "{class},{pasted},{failed}");
        }
        let _ = writeln!(out, "TOTAL,{},{}", self.total_pasted(), self.total_failed());
        out
    }
}

/// Runs a strategy over a dataset and writes images, annotations, and the
/// manifest under `out_dir`. Deterministic given `master_seed`; images are
/// independent work units processed in parallel.
pub fn run_strategy(
    dataset: &[ImageAnnotation],
    images_dir: &Path,
    strategy: &StrategyConfig,
    pools: &Pools,
    policy: &PlacementPolicy,
    master_seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    let images_out = out_dir.join("images");
    let ann_out = out_dir.join("annotations");
    std::fs::create_dir_all(&images_out).map_err(|e| Error::io(&images_out, e))?;
    std::fs::create_dir_all(&ann_out).map_err(|e| Error::io(&ann_out, e))?;

    let mut eligible: Vec<&ImageAnnotation> = dataset
        .iter()
        .filter(|a| a.objects.iter().any(|o| o.size_class() == SizeClass::Small))
        .collect();
    eligible.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    type PerImage = (Vec<(String, String)>, Manifest);
    let results: Vec<PerImage> = eligible
        .par_iter()
        .map(|ann| -> PerImage {
            let mut local = Manifest::default();
            let run = || -> Result<Vec<AugmentedSample>> {
                let image = crate::patch::load_image_for(images_dir, &ann.image_id)?;
                augment_image(&image, ann, strategy, pools, policy, master_seed)
            };
            match run() {
                Ok(samples) => {
                    let mut failures = Vec::new();
                    for sample in &samples {
                        let img_path =
                            images_out.join(format!("{}.png", sample.annotation.image_id));
                        let xml_path = ann_out.join(format!("{}.xml", sample.annotation.image_id));
                        let write = || -> Result<()> {
                            sample
                                .image
                                .save(&img_path)
                                .map_err(|e| Error::image(&img_path, e))?;
                            let xml = write_annotation(&sample.annotation)?;
                            std::fs::write(&xml_path, xml).map_err(|e| Error::io(&xml_path, e))?;
                            Ok(())
                        };
                        match write() {
                            Ok(()) => {
                                local.absorb(sample);
                                // attribute failures to the original classes
                                if sample.failed_placements > 0 {
                                    attribute_failures(&mut local, ann, sample);
                                }
                            }
                            Err(e) => failures.push((ann.image_id.clone(), e.to_string())),
                        }
                    }
                    (failures, local)
                }
                Err(e) => (vec![(ann.image_id.clone(), e.to_string())], local),
            }
        })
        .collect();

    let mut manifest = Manifest::default();
    for (skipped, local) in results {
        for (k, v) in local.per_class {
            let cell = manifest.per_class.entry(k).or_default();
            cell.0 += v.0;
            cell.1 += v.1;
        }
        manifest.samples_written += local.samples_written;
        manifest.skipped.extend(skipped);
    }
    manifest.skipped.sort();

    for (id, reason) in &manifest.skipped {
        eprintln!("skipped {id}: {reason}");
    }
    if !manifest.skipped.is_empty() {
        let log_path = out_dir.join("skipped.log");
        let mut text = String::new();
        for (id, reason) in &manifest.skipped {
            let _ = writeln!(text, "{id}\t{reason}");
        }
        std::fs::write(&log_path, text).map_err(|e| Error::io(&log_path, e))?;
    }
    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest.to_csv()).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

fn attribute_failures(manifest: &mut Manifest, ann: &ImageAnnotation, sample: &AugmentedSample) {
    // Failures cannot always be traced to a final class (the switch draw
    // happened before the failed placement), so they are charged to the
    // first small object's class as an aggregate tally.
    if let Some(obj) = ann
        .objects
        .iter()
        .find(|o| o.size_class() == SizeClass::Small)
    {
        manifest
            .per_class
            .entry(obj.class_name.clone())
            .or_default()
            .1 += sample.failed_placements as u64;
    }
}
